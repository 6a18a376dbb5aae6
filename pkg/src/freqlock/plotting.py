"""Report figures rendered to PNG files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_lock(traces, path):
    """Emitter detuning versus time for every (label, trace) pair."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, tr in traces:
        ax.plot(tr.t / 60.0, 1e3 * tr.nu, lw=0.7, label=label)
    ax.set_xlabel("time (min)")
    ax.set_ylabel("detuning from set point (MHz)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_visibility(series, path, instantaneous=()):
    """Windowed visibility traces with Poisson error bands."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, t_min, v in instantaneous:
        ax.plot(t_min, 100 * np.asarray(v), ls="--", lw=0.8, label=label)
    for label, points in series:
        t = np.array([p.t for p in points])
        v = np.array([p.v for p in points])
        s = np.array([p.sigma_v for p in points])
        line = ax.plot(t, 100 * v, lw=1.5, label=label)[0]
        ax.fill_between(t, 100 * (v - s), 100 * (v + s), color=line.get_color(), alpha=0.2)
    ax.set_xlabel("time (min)")
    ax.set_ylabel("visibility (%)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_histogram(hist, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(hist.centers, hist.normalized("perpendicular"), lw=0.7, label="perpendicular")
    ax.plot(hist.centers, hist.normalized("parallel"), lw=0.7, label="parallel")
    ax.set_xlabel("delay (ns)")
    ax.set_ylabel("normalized coincidences")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def plot_psd(psd, path, floor=None, unit="cps$^2$/Hz"):
    fig, ax = plt.subplots(figsize=(6, 4))
    sel = psd.frequencies > 0
    ax.loglog(psd.frequencies[sel], psd.density[sel], lw=0.8, label="Welch estimate")
    if floor is not None:
        ax.axhline(floor, color="k", ls="--", lw=0.8, label="shot-noise floor")
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel(f"PSD ({unit})")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3, which="both")
    _save(fig, path)
