"""Rate-based frequency lock: discriminator, PI law and closed-loop simulation.

The loop runs photon events through the exponential-smoothing estimator,
turns the rate deviation into a frequency error on the filter flank, and
feeds a PI controller that drives the strain actuator. The emitter frequency
meanwhile wanders with piezo creep and 1/f noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .detection import DetectionChannel, instantaneous_rate
from .drift import ActuatorModel, CreepModel, NoiseGenerator, NoiseModel, creep_detuning
from .errors import ConfigurationError
from .estimator import RateEstimator
from .spectra import slope_at
from .textio import write_columns


def rate_to_frequency_error(delta_r, slope):
    """Frequency deviation (GHz) from a rate deviation (cps) on a flank of slope cps/GHz."""
    if slope == 0:
        raise ConfigurationError("discriminator slope is zero")
    return delta_r / slope


@dataclass
class PiController:
    """Positional PI law with the integrator clamped to the output limits."""

    kp: float
    ki: float
    v_min: float = -math.inf
    v_max: float = math.inf
    integrator: float = 0.0
    saturated: bool = False

    def update(self, error, dt):
        if not dt > 0:
            raise ConfigurationError("controller step must be positive")
        integ = self.integrator + self.ki * error * dt
        self.integrator = min(max(integ, self.v_min), self.v_max)
        raw = self.kp * error + self.integrator
        out = min(max(raw, self.v_min), self.v_max)
        self.saturated = out != raw or self.integrator != integ
        return out


def pi_update(controller: PiController, error, dt):
    return controller.update(error, dt)


def gains_for_bandwidth(bandwidth, tau_filter, actuator_gain):
    """PI gains (V/GHz, V/(GHz s)) giving a first-order loop of ``bandwidth`` Hz.

    The PI zero cancels the estimator pole at ``1/tau_filter``, leaving an
    integrator loop whose unity-gain frequency is ``2 pi bandwidth``.
    """
    w = 2.0 * math.pi * bandwidth
    ki = w / actuator_gain
    return ki * tau_filter, ki


def auto_tau_filter(bandwidth):
    """Estimator integration time putting its corner at five times ``bandwidth``."""
    return 1.0 / (2.0 * math.pi * 5.0 * bandwidth)


@dataclass
class LockConfig:
    r_set: float
    nu_set: float
    slope: float
    update_period: float = 0.1
    target_bandwidth: float = 0.03
    polarity: int = 1
    step_ghz: float = 0.0
    step_time: float = math.inf

    def __post_init__(self):
        if self.slope == 0:
            raise ConfigurationError("discriminator slope must be non-zero")
        if self.r_set < 0:
            raise ConfigurationError("set-point rate must be non-negative")
        if self.polarity not in (1, -1):
            raise ConfigurationError("polarity must be +1 or -1")


@dataclass
class LockSimulation:
    """Everything one arm of the experiment needs for :func:`run_lock`."""

    channel: DetectionChannel
    lock: LockConfig
    actuator: ActuatorModel = field(default_factory=ActuatorModel)
    tau_cycle: float = 1e-6
    tau_filter: Optional[float] = None
    creep: Optional[CreepModel] = None
    noise: Optional[NoiseModel] = None
    monitor: Optional[DetectionChannel] = None
    lock_enabled: bool = True
    deterministic: bool = False
    watchdog_ghz: Optional[float] = None
    kp: Optional[float] = None
    ki: Optional[float] = None

    def resolved(self):
        """Return (tau_filter, kp, ki) after filling automatic values and checking consistency."""
        lk = self.lock
        tau_f = self.tau_filter if self.tau_filter is not None else auto_tau_filter(lk.target_bandwidth)
        if not lk.target_bandwidth > 0:
            raise ConfigurationError("target bandwidth must be positive")
        if lk.update_period < self.tau_cycle:
            raise ConfigurationError("update period shorter than the estimator cycle")
        if lk.update_period * lk.target_bandwidth > 0.1:
            raise ConfigurationError(
                f"update period {lk.update_period} s too slow for {lk.target_bandwidth} Hz bandwidth"
            )
        if self.lock_enabled and 1.0 / (2.0 * math.pi * tau_f) <= lk.target_bandwidth:
            raise ConfigurationError(
                f"estimator corner {1 / (2 * math.pi * tau_f):.3g} Hz must exceed the "
                f"loop bandwidth {lk.target_bandwidth} Hz"
            )
        kp0, ki0 = gains_for_bandwidth(lk.target_bandwidth, tau_f, self.actuator.gain)
        kp = kp0 if self.kp is None else self.kp
        ki = ki0 if self.ki is None else self.ki
        if self.creep is not None and self.creep.t0 > -1.0:
            raise ConfigurationError("creep step must precede the simulation by at least the 1 s floor")
        return tau_f, kp, ki


@dataclass
class LockTrace:
    t: np.ndarray
    dnu_true: np.ndarray
    rate_est: np.ndarray
    v_ctrl: np.ndarray
    residual: np.ndarray
    update_period: float
    nu_set: float
    r_ref: float
    slope: float
    locked: bool
    kp: float
    ki: float
    tau_filter: float
    monitor_counts: Optional[np.ndarray] = None
    monitor_slope: float = float("nan")
    diverged: bool = False
    saturated: bool = False
    commanded: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None

    @property
    def nu(self):
        """Emitter detuning from the lock set point, in GHz."""
        return self.residual if self.commanded is None else self.residual + self.commanded

    def residual_rms(self, settle=0.0):
        sel = self.t >= settle
        return float(np.sqrt(np.mean(self.residual[sel] ** 2)))

    def monitor_bins(self, bin_s=0.5, settle=0.0):
        """Out-of-loop counts summed into bins of ``bin_s`` seconds."""
        if self.monitor_counts is None:
            raise ConfigurationError("trace has no out-of-loop monitor")
        k = int(round(bin_s / self.update_period))
        if k < 1 or abs(k * self.update_period - bin_s) > 1e-9 * bin_s:
            raise ConfigurationError("monitor bin must be a multiple of the update period")
        start = int(math.ceil(settle / self.update_period - 1e-9))
        c = self.monitor_counts[start:]
        n = c.size // k
        return c[: n * k].reshape(n, k).sum(axis=1)

    def save(self, path, decimation=1):
        s = slice(None, None, max(int(decimation), 1))
        write_columns(
            path,
            ["t_s", "dnu_true_GHz", "rate_est_cps", "v_ctrl_V", "dnu_residual_GHz"],
            [self.t[s], self.dnu_true[s], self.rate_est[s], self.v_ctrl[s], self.residual[s]],
            comments=[
                f"locked {int(self.locked)} nu_set_GHz {self.nu_set:.9g} r_ref_cps {self.r_ref:.9g} "
                f"slope_cps_per_GHz {self.slope:.9g} diverged {int(self.diverged)}"
            ],
        )


def _drift_samples(sim: LockSimulation, times, rng):
    drift = np.zeros_like(times)
    if sim.creep is not None:
        drift += creep_detuning(sim.creep, times)
    if sim.noise is not None and not sim.noise.silent:
        dt = float(times[1] - times[0]) if times.size > 1 else 1.0
        noise = NoiseGenerator(sim.noise, dt, rng=rng).sample(times.size)
        drift += noise - noise[0]
    return drift


def run_lock(sim: LockSimulation, duration, seed=0) -> LockTrace:
    """Simulate one arm for ``duration`` seconds.

    The emitter rate is held constant within each controller update period;
    photon arrivals inside the period are Poisson and are folded into the
    estimator cycle by cycle. Identical ``seed`` gives an identical trace.
    """
    tau_f, kp, ki = sim.resolved()
    lk = sim.lock
    ch = sim.channel
    U = lk.update_period
    n_steps = int(round(duration / U))
    if n_steps < 1:
        raise ConfigurationError("duration shorter than one update period")
    m_cycles = int(round(U / sim.tau_cycle))
    est = RateEstimator(sim.tau_cycle, tau_f)
    est.check_occupancy(ch.r_qd * ch.curve.max_transmission() + ch.dark_rate)

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_ev, rng_mon, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))

    t = U * np.arange(n_steps)
    drift = _drift_samples(sim, t + 0.5 * U, rng_noise)
    commanded = np.where(t >= lk.step_time, lk.step_ghz, 0.0)
    target = lk.nu_set + commanded
    # reference as the estimator will see it: several photons in one cycle count once
    r_ref = -np.expm1(-(instantaneous_rate(ch, target) + ch.dark_rate) * sim.tau_cycle) / sim.tau_cycle
    est.estimate = float(r_ref[0])

    curve = ch.curve
    table = curve.is_tabulated
    if table:
        cx, cy = curve.nu, curve.values

        def transmission(nu):
            return float(np.interp(nu, cx, cy, left=0.0, right=0.0))
    else:

        def transmission(nu):
            return float(curve(nu))

    mon = sim.monitor
    mon_slope = float("nan")
    mon_counts = None
    if mon is not None:
        mon_slope = float(slope_at(mon.curve, lk.nu_set)) * mon.r_qd
        if abs(mon_slope) < 1e-9:
            raise ConfigurationError("set point is not on a flank of the monitor curve")
        mon_counts = np.zeros(n_steps)

    gain = sim.actuator.gain
    pi = PiController(kp, ki, sim.actuator.v_min, sim.actuator.v_max)
    watchdog = sim.watchdog_ghz if sim.watchdog_ghz is not None else 0.5 * curve.fwhm()

    rate_est = np.empty(n_steps)
    v_ctrl = np.empty(n_steps)
    residual = np.empty(n_steps)
    counts = np.empty(n_steps)
    volts = 0.0
    diverged = False
    saturated = False
    tau_c = sim.tau_cycle

    last = n_steps
    for k in range(n_steps):
        nu = lk.nu_set + drift[k] + gain * volts
        rate = ch.r_qd * transmission(nu) + ch.dark_rate
        if sim.deterministic:
            e = est.advance_expected(m_cycles, -math.expm1(-rate * tau_c))
            counts[k] = rate * U
        else:
            n_ev = rng_ev.poisson(rate * U)
            counts[k] = n_ev
            e = est.advance(m_cycles, rng_ev.integers(0, m_cycles, n_ev) if n_ev else ())
        if mon is not None:
            mrate = mon.r_qd * float(mon.curve.padded(nu)) + mon.dark_rate
            mon_counts[k] = mrate * U if sim.deterministic else rng_mon.poisson(mrate * U)
        rate_est[k] = e
        v_ctrl[k] = volts
        residual[k] = nu - target[k]
        if sim.lock_enabled:
            err = rate_to_frequency_error(e - r_ref[k], lk.slope)
            volts = pi.update(-lk.polarity * err, U)
            saturated |= pi.saturated
            if abs(residual[k]) > watchdog:
                diverged = True
                last = k + 1
                break

    sl = slice(0, last)
    trace = LockTrace(
        t=t[sl],
        dnu_true=drift[sl],
        rate_est=rate_est[sl],
        v_ctrl=v_ctrl[sl],
        residual=residual[sl],
        update_period=U,
        nu_set=lk.nu_set,
        r_ref=float(r_ref[0]),
        slope=lk.slope,
        locked=sim.lock_enabled,
        kp=kp,
        ki=ki,
        tau_filter=tau_f,
        monitor_counts=None if mon_counts is None else mon_counts[sl],
        monitor_slope=mon_slope,
        diverged=diverged,
        saturated=saturated,
        commanded=commanded[sl],
        counts=counts[sl],
    )
    return trace
