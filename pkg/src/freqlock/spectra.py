"""Emitter line shapes, filter transmission curves and set-point selection.

Frequencies are detunings in GHz from the weighted Rb D1 line center.
Transmission values are dimensionless and lie in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import optimize, signal

from .errors import (
    DomainError,
    ExtrapolationError,
    NoSetPointError,
    ResolutionError,
)

LASER = "laser"
EMITTER = "emitter-convolved"

_FOUR_LN2 = 4.0 * math.log(2.0)


def coherence_linewidth(t2_ps):
    """Lorentzian FWHM in GHz for a coherence time in ps, 1 / (pi T2)."""
    t2_ps = float(t2_ps)
    if not t2_ps > 0:
        raise DomainError(f"coherence time must be positive, got {t2_ps}")
    return 1.0 / (math.pi * t2_ps * 1e-3)


@dataclass(frozen=True)
class SpectralProfile:
    """Normalized Lorentzian emission line of one emitter."""

    center: float = 0.0
    fwhm: float = 1.0
    shape: str = "lorentzian"

    def __post_init__(self):
        if self.shape != "lorentzian":
            raise DomainError(f"unsupported line shape {self.shape!r}")
        if not self.fwhm > 0:
            raise DomainError(f"fwhm must be positive, got {self.fwhm}")

    def pdf(self, nu):
        hw = 0.5 * self.fwhm
        x = np.asarray(nu, dtype=float) - self.center
        return (hw / math.pi) / (x * x + hw * hw)

    def cdf(self, nu):
        x = np.asarray(nu, dtype=float) - self.center
        return 0.5 + np.arctan(x / (0.5 * self.fwhm)) / math.pi


def lorentzian_from_coherence(t2_ps, center=0.0):
    return SpectralProfile(center=center, fwhm=coherence_linewidth(t2_ps))


@dataclass(frozen=True)
class Peak:
    """Pseudo-Voigt transmission peak.

    ``lorentz_fraction`` mixes a Lorentzian (1.0) and a Gaussian (0.0) of the
    same FWHM; both components are normalized to ``amplitude`` at the center.
    """

    center: float
    fwhm: float
    amplitude: float = 1.0
    lorentz_fraction: float = 1.0

    def __post_init__(self):
        if not self.fwhm > 0:
            raise DomainError(f"peak fwhm must be positive, got {self.fwhm}")
        if not 0.0 <= self.amplitude <= 1.0:
            raise DomainError(f"peak amplitude must lie in [0, 1], got {self.amplitude}")
        if not 0.0 <= self.lorentz_fraction <= 1.0:
            raise DomainError("lorentz_fraction must lie in [0, 1]")

    def __call__(self, nu):
        x = (np.asarray(nu, dtype=float) - self.center) / self.fwhm
        lor = 1.0 / (1.0 + 4.0 * x * x)
        gau = np.exp(-_FOUR_LN2 * x * x)
        eta = self.lorentz_fraction
        return self.amplitude * (eta * lor + (1.0 - eta) * gau)

    def derivative(self, nu):
        x = (np.asarray(nu, dtype=float) - self.center) / self.fwhm
        lor = 1.0 / (1.0 + 4.0 * x * x)
        dlor = -8.0 * x * lor * lor
        dgau = -2.0 * _FOUR_LN2 * x * np.exp(-_FOUR_LN2 * x * x)
        eta = self.lorentz_fraction
        return self.amplitude * (eta * dlor + (1.0 - eta) * dgau) / self.fwhm


class FilterCurve:
    """Transmission versus detuning, either a peak list or a table.

    Tabulated curves raise :class:`ExtrapolationError` outside their range.
    Parametric curves are defined everywhere.
    """

    def __init__(self, peaks=None, nu=None, values=None, label=LASER):
        if (peaks is None) == (nu is None):
            raise DomainError("give either peaks or a table, not both")
        self.label = label
        if peaks is not None:
            self.peaks = tuple(peaks)
            if not self.peaks:
                raise DomainError("parametric curve needs at least one peak")
            self.nu = None
            self.values = None
            probe = np.array([p.center for p in self.peaks])
            if np.any(self(probe) > 1.0 + 1e-12):
                raise DomainError("overlapping peaks push transmission above 1")
        else:
            self.peaks = None
            nu = np.array(nu, dtype=float)
            values = np.array(values, dtype=float)
            if nu.ndim != 1 or nu.shape != values.shape or nu.size < 3:
                raise DomainError("table needs matching 1-D columns with >= 3 rows")
            if np.any(np.diff(nu) <= 0):
                raise DomainError("tabulated detunings must be strictly increasing")
            if np.any(values < 0) or np.any(values > 1):
                raise DomainError("tabulated transmission must lie in [0, 1]")
            nu.setflags(write=False)
            values.setflags(write=False)
            self.nu = nu
            self.values = values

    @classmethod
    def from_peaks(cls, peaks, label=LASER):
        return cls(peaks=peaks, label=label)

    @classmethod
    def from_table(cls, nu, values, label=LASER):
        return cls(nu=nu, values=values, label=label)

    @classmethod
    def load(cls, path, label=LASER):
        """Read a two-column ``detuning_GHz transmission`` text file."""
        data = np.loadtxt(path, comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise DomainError(f"{path}: expected 2 columns, found {data.shape[1]}")
        return cls(nu=data[:, 0], values=data[:, 1], label=label)

    def save(self, path, header=""):
        if not self.is_tabulated:
            raise DomainError("only tabulated curves can be written")
        text = "# detuning_GHz\ttransmission\n"
        if header:
            text = "".join(f"# {line}\n" for line in header.splitlines()) + text
        body = "\n".join(f"{a:.9g}\t{b:.9g}" for a, b in zip(self.nu, self.values))
        Path(path).write_text(text + body + "\n")

    @property
    def is_tabulated(self):
        return self.nu is not None

    @property
    def domain(self):
        if self.is_tabulated:
            return float(self.nu[0]), float(self.nu[-1])
        return -math.inf, math.inf

    def __call__(self, nu):
        nu = np.asarray(nu, dtype=float)
        if self.is_tabulated:
            lo, hi = self.domain
            if np.any(nu < lo) or np.any(nu > hi):
                raise ExtrapolationError(f"detuning outside tabulated range [{lo}, {hi}] GHz")
            return np.interp(nu, self.nu, self.values)
        total = np.zeros_like(nu)
        for p in self.peaks:
            total = total + p(nu)
        return total

    def padded(self, nu):
        """Evaluate with zero transmission outside a tabulated range."""
        if self.is_tabulated:
            return np.interp(nu, self.nu, self.values, left=0.0, right=0.0)
        return self(nu)

    def peak_location(self):
        if self.is_tabulated:
            return float(self.nu[np.argmax(self.values)])
        best = max(self.peaks, key=lambda p: p.amplitude)
        return best.center

    def center_span(self):
        if self.is_tabulated:
            loc = self.peak_location()
            return loc, loc
        centers = [p.center for p in self.peaks]
        return min(centers), max(centers)

    def fwhm(self):
        """Narrowest feature width in GHz (used for grid resolution checks)."""
        if not self.is_tabulated:
            return min(p.fwhm for p in self.peaks)
        k = int(np.argmax(self.values))
        half = 0.5 * self.values[k]
        nu, v = self.nu, self.values
        left = np.nonzero(v[: k + 1] <= half)[0]
        right = np.nonzero(v[k:] <= half)[0]
        edges = []
        if left.size:
            j = left[-1]
            edges.append(nu[k] - np.interp(half, [v[j], v[j + 1]], [nu[j], nu[j + 1]]))
        if right.size:
            j = k + right[0]
            edges.append(np.interp(half, [v[j], v[j - 1]], [nu[j], nu[j - 1]]) - nu[k])
        if not edges:
            return float(nu[-1] - nu[0])
        if len(edges) == 1:
            return float(2.0 * edges[0])
        return float(sum(edges))

    def area(self):
        """Integral of the transmission over detuning (GHz)."""
        if self.is_tabulated:
            return float(np.trapezoid(self.values, self.nu))
        # closed forms: Lorentzian pi*w/2, Gaussian w*sqrt(pi/(4 ln2))
        return float(
            sum(
                p.amplitude
                * p.fwhm
                * (p.lorentz_fraction * math.pi / 2 + (1 - p.lorentz_fraction) * math.sqrt(math.pi / _FOUR_LN2))
                for p in self.peaks
            )
        )

    def max_transmission(self):
        if self.is_tabulated:
            return float(self.values.max())
        lo, hi = self.center_span()
        w = max(p.fwhm for p in self.peaks)
        grid = np.linspace(lo - w, hi + w, 4001)
        return float(self(grid).max())


@dataclass(frozen=True)
class FilterSettings:
    """Magnetic-field tuning of a single-peak Faraday filter.

    Center and width move linearly with the axial field; coefficients are in
    MHz/mT, centers and widths in GHz. Temperature is carried as a label only.
    """

    temperature: float = 85.0
    field: float = 0.0
    center_coeff: float = 24.6
    width_coeff: float = 40.8
    reference_center: float = 0.0
    reference_width: float = 1.2
    reference_field: float = 0.0
    amplitude: float = 0.7
    lorentz_fraction: float = 0.5

    def __post_init__(self):
        if not self.width > 0:
            raise DomainError(
                f"field {self.field} mT gives non-positive filter width {self.width:.4g} GHz"
            )

    @property
    def center(self):
        return self.reference_center + 1e-3 * self.center_coeff * (self.field - self.reference_field)

    @property
    def width(self):
        return self.reference_width + 1e-3 * self.width_coeff * (self.field - self.reference_field)

    def curve(self):
        return FilterCurve.from_peaks(
            [Peak(self.center, self.width, self.amplitude, self.lorentz_fraction)]
        )


def filter_transmission(settings: FilterSettings, nu):
    return settings.curve()(nu)


def uniform_grid(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def default_grid(filter_curve: FilterCurve, profile: SpectralProfile):
    """Uniform grid spanning +-10 x (filter fwhm + profile fwhm) around the peaks."""
    wf = filter_curve.fwhm()
    wp = profile.fwhm
    step = min(wf, max(wp, wf / 10.0)) / 50.0
    lo, hi = filter_curve.center_span()
    half = 10.0 * (wf + wp)
    return uniform_grid(lo + profile.center - half, hi + profile.center + half, step)


def convolve(filter_curve: FilterCurve, profile: SpectralProfile, grid=None) -> FilterCurve:
    """Transmission seen by an emitter with line shape ``profile``.

    Returns a tabulated curve of ``(T_L * f)(nu)`` on ``grid``. The kernel is
    integrated exactly over each grid cell, so profiles narrower than the grid
    step collapse to the identity instead of aliasing. The filter is treated
    as opaque outside a tabulated range.
    """
    if grid is None:
        grid = default_grid(filter_curve, profile)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ResolutionError("convolution grid needs at least 3 points")
    steps = np.diff(grid)
    h = float(steps.mean())
    if np.any(np.abs(steps - h) > 1e-6 * h):
        raise ResolutionError("convolution grid must be uniform")
    wf = filter_curve.fwhm()
    if h > wf / 10.0:
        raise ResolutionError(
            f"grid step {h:.4g} GHz too coarse for filter fwhm {wf:.4g} GHz (need <= fwhm/10)"
        )
    n = grid.size
    k = n - 1
    offsets = h * np.arange(-k, k + 1)
    kernel = profile.cdf(offsets + 0.5 * h + profile.center) - profile.cdf(
        offsets - 0.5 * h + profile.center
    )
    src_nu = grid[0] - profile.center + h * np.arange(-k, n + k)
    src = filter_curve.padded(src_nu)
    out = signal.fftconvolve(src, kernel, mode="valid")
    out = np.clip(out, 0.0, 1.0)
    return FilterCurve.from_table(grid, out, label=EMITTER)


def _slope_table(curve: FilterCurve):
    nu, v = curve.nu, curve.values
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (nu[2:] - nu[:-2])
    d[0] = d[-1] = np.nan
    return d


def slope_at(curve: FilterCurve, nu):
    """dT/dnu in 1/GHz.

    Tabulated curves use central differences on their own grid, interpolated
    between nodes; the first and last node have no central difference.
    """
    nu = np.asarray(nu, dtype=float)
    if not curve.is_tabulated:
        total = np.zeros_like(nu)
        for p in curve.peaks:
            total = total + p.derivative(nu)
        return total
    lo, hi = curve.nu[1], curve.nu[-2]
    if np.any(nu < lo) or np.any(nu > hi):
        raise ExtrapolationError(f"slope needs interior detuning in [{lo}, {hi}] GHz")
    d = _slope_table(curve)
    return np.interp(nu, curve.nu[1:-1], d[1:-1])


class SetPoint(NamedTuple):
    nu: float
    transmission: float
    slope: float


STEEPEST = "steepest-slope"
TARGET = "target-transmission"


def _refine_steepest(curve, grid, mag, j):
    if curve.is_tabulated:
        y0, y1, y2 = mag[j - 1], mag[j], mag[j + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
        nu = float(grid[j] + shift * (grid[j + 1] - grid[j]))
    else:
        res = optimize.minimize_scalar(
            lambda x: -abs(float(slope_at(curve, x))),
            bounds=(grid[j - 1], grid[j + 1]),
            method="bounded",
            options={"xatol": 1e-12},
        )
        nu = float(res.x)
    return nu, abs(float(slope_at(curve, nu)))


def _search_grid(curve: FilterCurve):
    if curve.is_tabulated:
        return curve.nu[1:-1]
    lo, hi = curve.center_span()
    w = max(p.fwhm for p in curve.peaks)
    wmin = min(p.fwhm for p in curve.peaks)
    n = int(min(2_000_001, max(20_001, (hi - lo + 10 * w) / (wmin / 400))))
    return np.linspace(lo - 5 * w, hi + 5 * w, n)


def find_set_point(curve: FilterCurve, criterion=STEEPEST, target=None, tie_rtol=1e-3) -> SetPoint:
    """Place the lock point on a flank of ``curve``.

    ``steepest-slope`` picks the point of maximal |dT/dnu|; ``target-transmission``
    picks the first flank crossing of the absolute transmission ``target``.
    Flanks whose steepness agrees within ``tie_rtol`` count as tied and the
    lowest detuning wins.
    """
    grid = _search_grid(curve)
    slopes = slope_at(curve, grid)
    mag = np.abs(slopes)
    smax = float(np.max(mag))
    if not smax > 1e-12:
        raise NoSetPointError("curve is flat, no flank to lock on")

    if criterion == STEEPEST:
        inner = np.arange(1, grid.size - 1)
        is_max = (mag[inner] >= mag[inner - 1]) & (mag[inner] >= mag[inner + 1])
        is_max &= mag[inner] >= smax * (1.0 - 10.0 * tie_rtol)
        candidates = [int(j) for j in inner[is_max]] or [int(np.argmax(mag))]
        refined = [_refine_steepest(curve, grid, mag, j) for j in candidates]
        best = max(m for _, m in refined)
        nu = min(x for x, m in refined if m >= best * (1.0 - tie_rtol))
    elif criterion == TARGET:
        if target is None:
            raise NoSetPointError("target-transmission criterion needs a target value")
        vals = curve(grid) - target
        sign_change = np.nonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))[0]
        for j in sign_change:
            a, b = float(grid[j]), float(grid[j + 1])
            if vals[j] == 0.0:
                nu = a
            else:
                nu = optimize.brentq(lambda x: float(curve(x)) - target, a, b, xtol=1e-13)
            if abs(float(slope_at(curve, np.clip(nu, grid[0], grid[-1])))) > 1e-12:
                break
        else:
            raise NoSetPointError(f"transmission {target} is not crossed on any flank")
    else:
        raise NoSetPointError(f"unknown set-point criterion {criterion!r}")

    nu_eval = float(np.clip(nu, grid[0], grid[-1]))
    return SetPoint(nu_eval, float(curve(nu_eval)), float(slope_at(curve, nu_eval)))
