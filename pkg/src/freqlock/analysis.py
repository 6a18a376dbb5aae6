"""Noise analysis: Welch spectra, shot-noise-excluded deviation, bandwidth choice."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigurationError, DomainError, InconclusiveError
from .textio import write_columns


@dataclass
class PsdEstimate:
    frequencies: np.ndarray
    density: np.ndarray
    segments: int
    window: str

    @property
    def df(self):
        return float(self.frequencies[1] - self.frequencies[0])

    def save(self, path, unit="GHz^2/Hz"):
        write_columns(
            path,
            ["f_Hz", f"density_{unit}"],
            [self.frequencies, self.density],
            comments=[f"welch window {self.window} segments {self.segments}"],
        )

    def loglog_slope(self, f_min, f_max):
        """Least-squares slope of log density versus log frequency on a band."""
        sel = (self.frequencies >= f_min) & (self.frequencies <= f_max) & (self.frequencies > 0)
        if np.count_nonzero(sel) < 3:
            raise DomainError("band holds fewer than 3 frequency bins")
        return float(np.polyfit(np.log10(self.frequencies[sel]), np.log10(self.density[sel]), 1)[0])


def welch_psd(trace, dt, segment_length=None, overlap=0.5, window="hann") -> PsdEstimate:
    """One-sided PSD of a uniformly sampled trace.

    Hann-windowed segments, mean removed per segment, ``overlap`` as a fraction
    of ``segment_length``. Segments default to a quarter of the trace.
    """
    x = np.asarray(trace, dtype=float)
    if segment_length is None:
        segment_length = max(x.size // 4, 2)
    segment_length = int(segment_length)
    if x.size < 2 * segment_length or segment_length < 2:
        raise DomainError(
            f"trace of {x.size} samples too short for two segments of {segment_length}"
        )
    if not 0 <= overlap < 1:
        raise DomainError("overlap must lie in [0, 1)")
    noverlap = int(round(overlap * segment_length))
    f, p = signal.welch(
        x,
        fs=1.0 / dt,
        window=window,
        nperseg=segment_length,
        noverlap=noverlap,
        detrend="constant",
        scaling="density",
        return_onesided=True,
    )
    step = segment_length - noverlap
    nseg = 1 + (x.size - segment_length) // step
    return PsdEstimate(f, p, nseg, window)


def excess_deviation(counts, bin_s, slope, min_bins=30):
    """Frequency deviation in MHz with Poisson shot noise removed.

    ``sqrt(max(var(N) - mean(N), 0))`` counts per bin, converted to a rate and
    then to frequency through the discriminator ``slope`` (cps/GHz).
    """
    counts = np.asarray(counts, dtype=float)
    if slope == 0:
        raise ConfigurationError("discriminator slope is zero")
    if counts.size < min_bins:
        raise DomainError(f"need at least {min_bins} bins, got {counts.size}")
    if bin_s < 0.5:
        warnings.warn("bins shorter than 0.5 s mix in fast emitter noise", RuntimeWarning, stacklevel=2)
    excess = max(float(np.var(counts, ddof=1)) - float(np.mean(counts)), 0.0)
    return 1e3 * math.sqrt(excess) / (bin_s * abs(slope))


def shot_noise_floor(rate):
    """One-sided PSD (cps^2/Hz) of Poisson counting noise on a rate estimate."""
    return 2.0 * rate


def _log_binned(psd: PsdEstimate, per_decade):
    f, p = psd.frequencies, psd.density
    keep = f > 0
    f, p = f[keep], p[keep]
    edges = 10 ** np.arange(
        math.floor(math.log10(f[0]) * per_decade) / per_decade,
        math.log10(f[-1]) + 1.0 / per_decade,
        1.0 / per_decade,
    )
    idx = np.digitize(f, edges)
    fc, pc = [], []
    for k in np.unique(idx):
        sel = idx == k
        fc.append(math.exp(np.mean(np.log(f[sel]))))
        pc.append(float(np.mean(p[sel])))
    return np.array(fc), np.array(pc)


def find_crossover(psd: PsdEstimate, shot_floor, includes_floor=True, per_decade=10):
    """Frequency where excess noise falls to the shot-noise floor.

    With ``includes_floor`` the floor is subtracted from the measured density
    first. The spectrum is averaged in log-spaced bins; a power law is then
    fitted to the excess from one decade below the first crossing down to a
    quarter of the floor, and its intersection with the floor is returned.
    """
    if not shot_floor > 0:
        raise ConfigurationError("shot-noise floor must be positive")
    f, p = _log_binned(psd, per_decade)
    excess = p - shot_floor if includes_floor else p
    ratio = excess / shot_floor
    if not ratio[0] > 1.0:
        raise InconclusiveError("excess noise is below the shot-noise floor at the lowest frequency")
    below = np.nonzero(ratio <= 1.0)[0]
    if below.size == 0:
        raise InconclusiveError("excess noise stays above the shot-noise floor over the whole band")
    f_raw = f[below[0]]
    faint = below[0] + np.nonzero(ratio[below[0]:] < 0.25)[0]
    f_stop = f[faint[0]] if faint.size else f[-1]
    sel = (f >= f_raw / 10.0) & (f < f_stop) & (ratio > 0)
    if np.count_nonzero(sel) < 3:
        return float(f_raw)
    slope, icpt = np.polyfit(np.log(f[sel]), np.log(ratio[sel]), 1)
    if slope >= 0:
        raise InconclusiveError("excess noise does not fall with frequency near the floor")
    f_x = math.exp(-icpt / slope)
    if not f[0] <= f_x <= f[-1]:
        raise InconclusiveError("fitted crossover lies outside the measured band")
    return float(f_x)


def recommend_bandwidth(psd_signal: PsdEstimate, shot_floor, safety=3.0, includes_floor=True):
    """Feedback bandwidth in Hz: the 1/f to shot-noise crossover divided by ``safety``."""
    return find_crossover(psd_signal, shot_floor, includes_floor=includes_floor) / safety
