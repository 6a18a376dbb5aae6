"""Exponential-smoothing photon-rate estimator.

Once per digital cycle the estimate decays by ``d = exp(-tau_cycle/tau_filter)``
and grows by ``i = (1 - d) / tau_cycle`` if at least one photon arrived.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import signal

from .errors import ConfigurationError
from .textio import write_columns

MAX_OCCUPANCY = 0.1


class OccupancyWarning(RuntimeWarning):
    """More than ``MAX_OCCUPANCY`` photons expected per cycle."""


class RateEstimator:
    """First-order IIR rate estimator driven by per-cycle arrival flags.

    Parameters
    ----------
    tau_cycle : float
        Cycle time of the digital loop in s.
    tau_filter : float
        Integration time in s, must exceed ``tau_cycle``.
    initial : float
        Starting estimate in cps.
    """

    def __init__(self, tau_cycle, tau_filter, initial=0.0):
        if not 0 < tau_cycle < tau_filter:
            raise ConfigurationError(
                f"need 0 < tau_cycle < tau_filter, got {tau_cycle} and {tau_filter}"
            )
        if initial < 0:
            raise ConfigurationError("initial estimate must be non-negative")
        self.tau_cycle = float(tau_cycle)
        self.tau_filter = float(tau_filter)
        self.log_d = -self.tau_cycle / self.tau_filter
        self.d = math.exp(self.log_d)
        self.i = -math.expm1(self.log_d) / self.tau_cycle
        self.estimate = float(initial)

    def __repr__(self):
        return (
            f"RateEstimator(tau_cycle={self.tau_cycle}, tau_filter={self.tau_filter}, "
            f"estimate={self.estimate:.6g})"
        )

    @property
    def corner_frequency(self):
        return 1.0 / (2.0 * math.pi * self.tau_filter)

    def tick(self, photon_arrived):
        self.estimate = self.estimate * self.d + (self.i if photon_arrived else 0.0)
        return self.estimate

    def advance(self, n_cycles, event_cycles=()):
        """Run ``n_cycles`` ticks at once.

        ``event_cycles`` holds the cycle index (0-based within this block) of
        every detected photon; several photons in one cycle count once.
        Equivalent to calling :meth:`tick` once per cycle.
        """
        ev = np.asarray(event_cycles, dtype=np.int64)
        if ev.size:
            ev = np.sort(ev)
            if ev[0] < 0 or ev[-1] >= n_cycles:
                raise ValueError("event cycle outside the block")
            dup = ev[1:] == ev[:-1]
            if dup.any():
                ev = ev[np.concatenate(([True], ~dup))]
            gain = self.i * float(np.exp(self.log_d * (n_cycles - 1 - ev)).sum())
        else:
            gain = 0.0
        self.estimate = self.estimate * math.exp(self.log_d * n_cycles) + gain
        return self.estimate

    def advance_expected(self, n_cycles, p_arrival):
        """Advance with the arrival flag replaced by its probability."""
        decay = math.exp(self.log_d * n_cycles)
        gain = math.expm1(self.log_d * n_cycles) / math.expm1(self.log_d)
        self.estimate = self.estimate * decay + self.i * p_arrival * gain
        return self.estimate

    def filter(self, arrivals):
        """Estimate after each cycle for a whole array of (possibly fractional) inputs."""
        arrivals = np.asarray(arrivals, dtype=float)
        out, _ = signal.lfilter([self.i], [1.0, -self.d], arrivals, zi=[self.d * self.estimate])
        if out.size:
            self.estimate = float(out[-1])
        return out

    def steady_state_std(self, rate):
        """Standard deviation of the estimate under Poisson input at ``rate`` cps."""
        if rate < 0:
            raise ConfigurationError("rate must be non-negative")
        p = rate * self.tau_cycle
        return math.sqrt(p * self.i**2 / -math.expm1(2.0 * self.log_d))

    def check_occupancy(self, rate_bound):
        occ = rate_bound * self.tau_cycle
        if occ > MAX_OCCUPANCY:
            warnings.warn(
                f"{occ:.3g} photons per cycle expected; arrival flags will saturate",
                OccupancyWarning,
                stacklevel=2,
            )
        return occ


def new_estimator(tau_cycle, tau_filter, initial=0.0):
    return RateEstimator(tau_cycle, tau_filter, initial)


def tick(estimator: RateEstimator, photon_arrived):
    return estimator.tick(photon_arrived)


def steady_state_std(estimator: RateEstimator, rate):
    return estimator.steady_state_std(rate)


def save_estimate(path, t, estimate, decimation=1):
    """Estimate trace (t_s, estimate_cps)."""
    s = slice(None, None, max(int(decimation), 1))
    write_columns(path, ["t_s", "estimate_cps"], [np.asarray(t)[s], np.asarray(estimate)[s]])
