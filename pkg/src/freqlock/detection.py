"""Filtered photon detection: rate through the filter and Poisson event trains."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolationError, DomainError
from .spectra import FilterCurve

SIGNAL = 0
DARK = 1

_CHUNK = 2_000_000


@dataclass
class DetectionChannel:
    """Photon stream at one counting module behind a filter.

    ``r_qd`` already includes detector efficiency. ``intensity`` optionally
    scales it with a function of time for robustness studies.
    """

    r_qd: float
    curve: FilterCurve
    dark_rate: float = 0.0
    intensity: Optional[Callable] = None

    def __post_init__(self):
        if self.r_qd < 0:
            raise DomainError("emitter rate must be non-negative")
        if self.dark_rate < 0:
            raise DomainError("dark rate must be non-negative")


def instantaneous_rate(channel: DetectionChannel, nu, t=None):
    """Signal detection rate in cps for emitter detuning ``nu`` (GHz)."""
    rate = channel.curve(nu) * channel.r_qd
    if channel.intensity is not None and t is not None:
        rate = rate * channel.intensity(t)
    return rate


@dataclass
class EventTrain:
    times: np.ndarray
    tags: np.ndarray
    window: tuple

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.tags = np.asarray(self.tags, dtype=np.int8)
        if self.times.shape != self.tags.shape:
            raise DomainError("one tag per timestamp")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("event timestamps must be strictly increasing")
        t_a, t_b = self.window
        if self.times.size and (self.times[0] < t_a or self.times[-1] > t_b):
            raise DomainError("event outside the simulated window")

    def __len__(self):
        return self.times.size

    @property
    def n_signal(self):
        return int(np.count_nonzero(self.tags == SIGNAL))

    @property
    def n_dark(self):
        return int(np.count_nonzero(self.tags == DARK))

    def counts(self, edges):
        return np.histogram(self.times, bins=edges)[0]

    def save(self, path):
        lines = [f"# window_s {self.window[0]:.12g} {self.window[1]:.12g}", "# t_s\ttag"]
        names = {SIGNAL: "signal", DARK: "dark"}
        lines += [f"{t:.12g}\t{names[int(g)]}" for t, g in zip(self.times, self.tags)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        window = None
        times, tags = [], []
        codes = {"signal": SIGNAL, "dark": DARK}
        for line in Path(path).read_text().splitlines():
            if line.startswith("# window_s"):
                _, _, a, b = line.split()
                window = (float(a), float(b))
            elif line and not line.startswith("#"):
                t, g = line.split()
                times.append(float(t))
                tags.append(codes[g])
        if window is None:
            window = (min(times, default=0.0), max(times, default=0.0))
        return cls(np.array(times), np.array(tags, dtype=np.int8), window)


def _uniform_sorted(rng, n, t_a, t_b):
    return np.sort(rng.uniform(t_a, t_b, n))


def generate_events(rate_fn, window, rate_bound, rng, tag=SIGNAL) -> EventTrain:
    """Inhomogeneous Poisson process by thinning.

    ``rate_fn`` maps an array of times (s) to rates (cps) and must stay below
    ``rate_bound`` on the window.
    """
    t_a, t_b = map(float, window)
    if not t_b > t_a:
        raise DomainError("window must have positive length")
    if rate_bound < 0:
        raise DomainError("rate bound must be non-negative")
    n = rng.poisson(rate_bound * (t_b - t_a)) if rate_bound > 0 else 0
    kept = []
    for start in range(0, n, _CHUNK):
        m = min(_CHUNK, n - start)
        cand = rng.uniform(t_a, t_b, m)
        lam = np.broadcast_to(np.asarray(rate_fn(cand), dtype=float), cand.shape)
        if np.any(lam > rate_bound * (1 + 1e-9)) or np.any(lam < 0):
            raise BoundViolationError(
                f"rate {lam.max():.6g} cps exceeds thinning bound {rate_bound:.6g} cps"
            )
        accept = rng.uniform(0.0, rate_bound, m) < lam
        kept.append(cand[accept])
    times = np.sort(np.concatenate(kept)) if kept else np.empty(0)
    return EventTrain(times, np.full(times.size, tag, dtype=np.int8), (t_a, t_b))


def merge(a: EventTrain, b: EventTrain) -> EventTrain:
    window = (min(a.window[0], b.window[0]), max(a.window[1], b.window[1]))
    times = np.concatenate([a.times, b.times])
    tags = np.concatenate([a.tags, b.tags])
    order = np.argsort(times, kind="stable")
    return EventTrain(times[order], tags[order], window)


def merge_dark(train: EventTrain, dark_rate, window, rng) -> EventTrain:
    """Add detector dark counts (tagged ``DARK``) at a constant rate."""
    if dark_rate < 0:
        raise DomainError("dark rate must be non-negative")
    if dark_rate == 0:
        return train
    t_a, t_b = map(float, window)
    dark = _uniform_sorted(rng, rng.poisson(dark_rate * (t_b - t_a)), t_a, t_b)
    return merge(train, EventTrain(dark, np.full(dark.size, DARK, dtype=np.int8), (t_a, t_b)))
