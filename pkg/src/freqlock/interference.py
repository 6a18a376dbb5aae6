"""Two-photon interference figures of merit for two separate emitters.

Lifetimes and coherence times are in ps, rates in 1/ns, detunings in GHz,
histogram delays in ns.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NoSolutionError, UndefinedVisibilityError
from .textio import write_columns

REP_PERIOD_NS = 1e3 / 76.0
PARALLEL = "parallel"
PERPENDICULAR = "perpendicular"


class StatisticsWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EmitterParams:
    t1: float
    t2: float

    def __post_init__(self):
        if not self.t1 > 0 or not self.t2 > 0:
            raise DomainError("lifetime and coherence time must be positive")
        if self.t2 > 2.0 * self.t1 * (1 + 1e-12):
            raise DomainError(f"coherence time {self.t2} ps exceeds twice the lifetime {self.t1} ps")

    @property
    def gamma(self):
        """Radiative decay rate in 1/ns."""
        return 1e3 / self.t1

    @property
    def gamma_star(self):
        """Pure dephasing rate in 1/ns."""
        return max(2e3 / self.t2 - 1e3 / self.t1, 0.0)


def indistinguishability(e: EmitterParams):
    return e.t2 / (2.0 * e.t1)


def _lineshape_terms(e1, e2):
    g1, g2 = e1.gamma, e2.gamma
    total = g1 + g2 + e1.gamma_star + e2.gamma_star
    return g1 * g2 / (g1 + g2), total


def tpi_visibility(e1: EmitterParams, e2: EmitterParams, delta_nu):
    """Interference visibility of photons from two emitters detuned by ``delta_nu`` GHz."""
    pref, total = _lineshape_terms(e1, e2)
    w = 2.0 * math.pi * np.asarray(delta_nu, dtype=float)
    v = pref * total / (w * w + 0.25 * total * total)
    return float(v) if v.ndim == 0 else v


def invert_visibility(v, e1: EmitterParams, e2: EmitterParams):
    """Non-negative detuning (GHz) at which the visibility equals ``v``."""
    pref, total = _lineshape_terms(e1, e2)
    v_max = 4.0 * pref / total
    if not 0 < v <= v_max * (1 + 1e-12):
        raise NoSolutionError(f"visibility {v} outside (0, {v_max:.6g}]")
    w2 = pref * total / v - 0.25 * total * total
    return math.sqrt(max(w2, 0.0)) / (2.0 * math.pi)


def visibility_from_areas(a_perp, a_par):
    """Visibility from central-peak areas for perpendicular and parallel polarizations.

    Negative values are returned as they are; they signal a statistical
    fluctuation rather than physics.
    """
    if a_perp == 0:
        raise UndefinedVisibilityError("perpendicular peak area is zero")
    if a_perp < 0 or a_par < 0:
        raise DomainError("peak areas must be non-negative")
    return (a_perp - a_par) / a_perp


@dataclass
class VisibilityPoint:
    t: float
    window: float
    v: float
    sigma_v: float = 0.0


def windowed_visibility(times, dnu, e1, e2, window, step=None):
    """Time-averaged visibility over the trailing ``window`` (minutes).

    ``times`` in minutes, ``dnu`` the mutual detuning in GHz. Points start at
    ``times[0] + window`` and advance by ``step`` (default: sample spacing).
    """
    times = np.asarray(times, dtype=float)
    dnu = np.asarray(dnu, dtype=float)
    if times.shape != dnu.shape or times.size < 2:
        raise DomainError("need matching time and detuning samples")
    if not window > 0:
        raise DomainError("window must be positive")
    span = times[-1] - times[0]
    if span < window * (1 - 1e-12):
        raise DomainError(f"drift spans {span:.4g} min, shorter than the {window} min window")
    v = tpi_visibility(e1, e2, dnu)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(times))))
    if step is None:
        step = float(np.median(np.diff(times)))
    n = int(math.floor((span - window) / step + 1e-9)) + 1
    t_end = times[0] + window + step * np.arange(n)
    vw = (np.interp(t_end, times, cum) - np.interp(t_end - window, times, cum)) / window
    return [VisibilityPoint(float(a), float(window), float(b)) for a, b in zip(t_end, vw)]


def save_visibility(path, points):
    write_columns(
        path,
        ["t_min", "V", "sigma_V"],
        [[p.t for p in points], [p.v for p in points], [p.sigma_v for p in points]],
        comments=[f"window_min {points[0].window:.6g}" if points else "empty"],
    )


def _shape_cdf(tau, t1a, t1b):
    """CDF of the symmetric double-exponential coincidence peak shape."""
    tau = np.asarray(tau, dtype=float)
    norm = 2.0 * (t1a + t1b)

    def half(x):
        return t1a * (1 - np.exp(-x / t1a)) + t1b * (1 - np.exp(-x / t1b))

    pos = 0.5 + half(np.abs(tau)) / norm
    return np.where(tau >= 0, pos, 1.0 - pos)


@dataclass
class HomHistogram:
    """Coincidence counts versus delay for both polarization settings."""

    edges: np.ndarray
    counts_par: np.ndarray
    counts_perp: np.ndarray
    rep_period: float
    half_window: float
    t_acq: float
    n_side: int

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def bin_width(self):
        return float(self.edges[1] - self.edges[0])

    def counts(self, setting):
        return self.counts_par if setting == PARALLEL else self.counts_perp

    def peak_masks(self):
        c = self.centers
        return [
            np.abs(c - j * self.rep_period) <= self.half_window
            for j in range(-self.n_side, self.n_side + 1)
        ]

    def normalized(self, setting):
        """Counts divided by the mean side-peak area of that setting."""
        areas = peak_areas(self.counts(setting), self)
        return self.counts(setting) / areas.side.mean()

    def save(self, path):
        write_columns(
            path,
            ["bin_center_ns", "counts_parallel", "counts_perpendicular"],
            [self.centers, self.counts_par, self.counts_perp],
            fmt=["%.6f", "%.6g", "%.6g"],
            comments=[
                f"rep_period_ns {self.rep_period:.9g} half_window_ns {self.half_window:.9g} "
                f"t_acq_s {self.t_acq:.9g} n_side {self.n_side}"
            ],
        )


class PeakAreas(NamedTuple):
    central: float
    side: np.ndarray
    var_central: float
    var_side: np.ndarray


def peak_areas(counts, hist: HomHistogram, floor_per_bin=0.0, raw=None) -> PeakAreas:
    """Sum counts inside the coincidence window of every peak.

    ``floor_per_bin`` is subtracted; variances are taken from the raw Poisson
    counts (``raw`` defaults to ``counts``).
    """
    raw = counts if raw is None else raw
    sums, var = [], []
    for mask in hist.peak_masks():
        sums.append(float(counts[mask].sum()) - floor_per_bin * int(mask.sum()))
        var.append(float(raw[mask].sum()))
    mid = hist.n_side
    side = np.array(sums[:mid] + sums[mid + 1 :])
    vside = np.array(var[:mid] + var[mid + 1 :])
    return PeakAreas(sums[mid], side, var[mid], vside)


def coincidence_budget(rates, rep_period, t_acq):
    """Expected side-peak area for two uncorrelated pulsed streams (counts)."""
    return rates[0] * rates[1] * rep_period * 1e-9 * t_acq


def accidental_floor(signal_rates, dark_rates, bin_width, t_acq):
    """Flat accidental coincidences per bin from detector dark counts."""
    r1, r2 = signal_rates
    d1, d2 = dark_rates
    return (r1 * d2 + r2 * d1 + d1 * d2) * bin_width * 1e-9 * t_acq


def synthesize_histogram(
    v_true,
    rates,
    t_acq,
    rng,
    rep_period=REP_PERIOD_NS,
    n_side=6,
    blink=1.0,
    t1=(155.0, 187.0),
    dark_rates=(0.0, 0.0),
    bins_per_period=128,
    half_window=None,
    side_area=None,
) -> HomHistogram:
    """Poisson-sampled HOM histograms for parallel and perpendicular settings.

    Side peaks carry ``side_area`` counts on average (by default the product
    of the two detector rates, the pulse period and ``t_acq``). The central
    peak holds ``0.5 * blink`` of that for perpendicular polarizations and a
    further factor ``1 - v_true`` for parallel ones.
    """
    if not 0.0 <= v_true <= 1.0:
        raise DomainError("true visibility must lie in [0, 1]")
    if not 0.0 < blink <= 1.0:
        raise DomainError("blink factor must lie in (0, 1]")
    if rep_period <= 0:
        raise DomainError("repetition period must be positive")
    if half_window is None:
        half_window = 0.5 * rep_period
    side = coincidence_budget(rates, rep_period, t_acq) if side_area is None else float(side_area)
    bw = rep_period / bins_per_period
    edges = bw * (np.arange(-(n_side + 0.5) * bins_per_period, (n_side + 0.5) * bins_per_period + 1))
    t1a, t1b = 1e-3 * t1[0], 1e-3 * t1[1]
    floor = accidental_floor(rates, dark_rates, bw, t_acq)

    def expected(central):
        mu = np.full(edges.size - 1, floor)
        lo_c = _shape_cdf(-0.5 * rep_period, t1a, t1b)
        hi_c = _shape_cdf(0.5 * rep_period, t1a, t1b)
        inside = hi_c - lo_c
        for j in range(-n_side, n_side + 1):
            area = central if j == 0 else side
            x0 = np.clip(edges[:-1] - j * rep_period, -0.5 * rep_period, 0.5 * rep_period)
            x1 = np.clip(edges[1:] - j * rep_period, -0.5 * rep_period, 0.5 * rep_period)
            mu += area * (_shape_cdf(x1, t1a, t1b) - _shape_cdf(x0, t1a, t1b)) / inside
        return mu

    c_perp = 0.5 * blink * side
    c_par = c_perp * (1.0 - v_true)
    if c_perp < 1.0:
        warnings.warn("expected central-peak counts below one", StatisticsWarning, stacklevel=2)
    counts_perp = rng.poisson(expected(c_perp)).astype(float)
    counts_par = rng.poisson(expected(c_par)).astype(float)
    return HomHistogram(edges, counts_par, counts_perp, rep_period, half_window, t_acq, n_side)


class CorrectedAreas(NamedTuple):
    parallel: PeakAreas
    perpendicular: PeakAreas


def dark_correct(hist: HomHistogram, dark_rates, signal_rates) -> CorrectedAreas:
    """Peak areas with the flat dark-count accidental floor removed."""
    if min(dark_rates) < 0 or min(signal_rates) < 0:
        raise DomainError("rates must be non-negative")
    floor = accidental_floor(signal_rates, dark_rates, hist.bin_width, hist.t_acq)
    out = []
    for setting in (PARALLEL, PERPENDICULAR):
        a = peak_areas(hist.counts(setting), hist, floor)
        if a.central < 0 or np.any(a.side < 0):
            warnings.warn("dark correction drove a peak area negative; clamped to 0", StatisticsWarning, stacklevel=2)
            a = PeakAreas(max(a.central, 0.0), np.maximum(a.side, 0.0), a.var_central, a.var_side)
        out.append(a)
    return CorrectedAreas(*out)


def hom_visibility(areas: CorrectedAreas, normalize=True):
    """Visibility and its Poisson uncertainty from corrected peak areas.

    With ``normalize`` each central area is first divided by the mean side
    peak of its own setting, as in normalized coincidence plots.
    """
    par, perp = areas.parallel, areas.perpendicular
    rel2 = 0.0
    a_par, a_perp = par.central, perp.central
    if a_perp <= 0:
        raise UndefinedVisibilityError("perpendicular central area is zero")
    if normalize:
        s_par, s_perp = par.side.mean(), perp.side.mean()
        a_par, a_perp = a_par / s_par, a_perp / s_perp
        rel2 += par.var_side.sum() / par.side.sum() ** 2 + perp.var_side.sum() / perp.side.sum() ** 2
    v = visibility_from_areas(a_perp, a_par)
    if par.central > 0:
        rel2 += par.var_central / par.central**2
    rel2 += perp.var_central / perp.central**2
    sigma = abs(1.0 - v) * math.sqrt(rel2)
    if par.central <= 0:
        sigma = math.sqrt(par.var_central) / perp.central
    return v, sigma


def visibility_sigma(v, side_area, blink=1.0, n_side=6):
    """Expected Poisson uncertainty of a side-peak-normalized visibility.

    ``side_area`` is the expected count in one side peak; both settings are
    assumed to share the same budget.
    """
    if not side_area > 0:
        raise DomainError("side-peak budget must be positive")
    q = 0.5 * blink * side_area
    p = q * (1.0 - v)
    rel2 = 1.0 / q + 2.0 / (2 * n_side * side_area)
    if p > 0:
        rel2 += 1.0 / p
        return abs(1.0 - v) * math.sqrt(rel2)
    return 1.0 / q
