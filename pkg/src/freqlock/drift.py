"""Emitter frequency perturbations: piezo creep, actuator response, 1/f noise.

Times are in seconds, frequency offsets in GHz. Creep follows a logarithmic
law in the time since the voltage step, with the log argument in minutes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import ConfigurationError, DomainError, FitError
from .textio import write_columns

CREEP_FLOOR_S = 1.0
MINUTE = 60.0


class SaturationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CreepModel:
    """Logarithmic creep: ``dnu0 * (1 + alpha * log10((t - t0) / 1 min))``."""

    dnu0: float = 0.9
    alpha: float = 0.556
    t0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.dnu0)):
            raise DomainError("creep parameters must be finite")


def creep_detuning(model: CreepModel, t):
    """Detuning in GHz at time ``t``; valid from ``t0 + CREEP_FLOOR_S`` on."""
    t = np.asarray(t, dtype=float)
    age = t - model.t0
    if np.any(age < CREEP_FLOOR_S * (1 - 1e-12)):
        raise DomainError(
            f"creep model evaluated {np.min(age):.3g} s after the step; "
            f"valid only from {CREEP_FLOOR_S} s on"
        )
    out = model.dnu0 * (1.0 + model.alpha * np.log10(age / MINUTE))
    return float(out) if out.ndim == 0 else out


def calibrate_creep(dnu_end, t_end, age_at_zero=CREEP_FLOOR_S):
    """Creep model that is zero at ``t = 0`` and reaches ``dnu_end`` at ``t_end``.

    The voltage step is placed ``age_at_zero`` seconds before ``t = 0``.
    """
    if not (0 < age_at_zero < MINUTE):
        raise DomainError("age at zero crossing must lie between 0 and 60 s")
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    alpha = -1.0 / math.log10(age_at_zero / MINUTE)
    dnu0 = dnu_end / (1.0 + alpha * math.log10((t_end + age_at_zero) / MINUTE))
    return CreepModel(dnu0=dnu0, alpha=alpha, t0=-age_at_zero)


@dataclass(frozen=True)
class ActuatorModel:
    """Static tuning gain plus one creep term per voltage step.

    ``creep_per_volt`` is a creep template whose ``dnu0`` is per volt of step;
    each step contributes its creep relative to the floor time, so a step
    causes no jump beyond ``gain * dV``.
    """

    gain: float = 10.0
    v_min: float = -50.0
    v_max: float = 50.0
    creep_per_volt: CreepModel | None = None

    def __post_init__(self):
        if self.gain == 0:
            raise DomainError("actuator gain must be non-zero")
        if not self.v_min < self.v_max:
            raise DomainError("voltage limits must satisfy v_min < v_max")


def clamp_history(model: ActuatorModel, history):
    """Clip cumulative voltage to the limits; return (steps, saturated)."""
    steps = []
    level = 0.0
    saturated = False
    last_t = -math.inf
    for t_step, dv in history:
        if t_step < last_t:
            raise DomainError("voltage steps must be time-ordered")
        last_t = t_step
        target = level + dv
        clipped = min(max(target, model.v_min), model.v_max)
        saturated |= clipped != target
        steps.append((float(t_step), clipped - level))
        level = clipped
    return steps, saturated


def actuator_offset(model: ActuatorModel, history, t):
    """Frequency offset in GHz produced by the voltage steps up to ``t``."""
    steps, saturated = clamp_history(model, history)
    if saturated:
        warnings.warn("commanded voltage clamped to actuator limits", SaturationWarning, stacklevel=2)
    t_arr = np.asarray(t, dtype=float)
    total = np.zeros_like(t_arr)
    tmpl = model.creep_per_volt
    for t_step, dv in steps:
        on = t_arr >= t_step
        total = total + np.where(on, model.gain * dv, 0.0)
        if tmpl is not None and tmpl.dnu0 != 0 and dv != 0:
            age = np.maximum(t_arr - t_step, CREEP_FLOOR_S)
            rel = tmpl.dnu0 * tmpl.alpha * np.log10(age / CREEP_FLOOR_S)
            total = total + np.where(on, dv * rel, 0.0)
    return float(total) if total.ndim == 0 else total


@dataclass(frozen=True)
class NoiseModel:
    """One-sided frequency-noise PSD ``h_flicker / f + h_white`` in GHz^2/Hz."""

    h_flicker: float = 0.0
    h_white: float = 0.0
    f_low: float = 1e-4
    f_high: float = 0.5
    seed: int = 0
    per_decade: int = 3

    def __post_init__(self):
        if self.h_flicker < 0 or self.h_white < 0:
            raise ConfigurationError("noise coefficients must be non-negative")
        if not 0 < self.f_low < self.f_high:
            raise ConfigurationError("noise band needs 0 < f_low < f_high")

    @property
    def silent(self):
        return self.h_flicker == 0 and self.h_white == 0


class NoiseGenerator:
    """Streaming sampler for a :class:`NoiseModel` at fixed step ``dt``.

    Flicker noise is a sum of first-order low-pass filtered white processes
    with corner frequencies log-spaced ``per_decade`` times per decade,
    extended half a decade past each band edge. Each component carries the
    same variance ``h * ln(10) / per_decade`` so the summed spectrum is 1/f.
    """

    def __init__(self, model: NoiseModel, dt, rng=None):
        if not dt > 0:
            raise ConfigurationError("noise sample step must be positive")
        if not dt < 1.0 / (2.0 * model.f_high):
            raise ConfigurationError(
                f"step {dt} s cannot represent f_high = {model.f_high} Hz (Nyquist {0.5 / dt} Hz)"
            )
        self.model = model
        self.dt = float(dt)
        self.rng = rng if rng is not None else np.random.default_rng(model.seed)
        spacing = math.log(10.0) / model.per_decade
        lo = math.log(model.f_low) - 0.5 * math.log(10.0)
        hi = math.log(model.f_high) + 0.5 * math.log(10.0)
        n = int(math.floor((hi - lo) / spacing)) + 1
        self.corners = np.exp(lo + spacing * np.arange(n))
        self.a = np.exp(-2.0 * math.pi * self.corners * self.dt)
        var = model.h_flicker * spacing
        self.b = np.sqrt(var * (1.0 - self.a**2))
        self.white_sigma = math.sqrt(model.h_white / (2.0 * self.dt))
        self.state = None
        if model.h_flicker > 0:
            self.state = self.rng.standard_normal(n) * math.sqrt(var)

    def sample(self, n):
        n = int(n)
        out = np.zeros(n)
        if self.model.silent or n == 0:
            return out
        # time-major draws so splitting a run into blocks reproduces it exactly
        k_flicker = self.corners.size if self.state is not None else 0
        w = self.rng.standard_normal((n, k_flicker + 1)).T
        for k in range(k_flicker):
            y, _ = signal.lfilter([self.b[k]], [1.0, -self.a[k]], w[k], zi=[self.a[k] * self.state[k]])
            self.state[k] = y[-1]
            out += y
        if self.white_sigma > 0:
            out += self.white_sigma * w[-1]
        return out


def sample_noise(model: NoiseModel, duration, dt, rng=None):
    """Frequency-offset trace (GHz) with ``round(duration / dt)`` samples."""
    n = int(round(duration / dt))
    if n < 1:
        raise ConfigurationError("duration shorter than one sample")
    return NoiseGenerator(model, dt, rng=rng).sample(n)


@dataclass
class CreepFit:
    model: CreepModel
    errors: dict = field(default_factory=dict)
    residual_rms: float = 0.0
    nfev: int = 0


def _linear_creep_fit(t, y, t0):
    x = np.log10((t - t0) / MINUTE)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = max(len(y) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(design.T @ design)
    return coef, cov, resid


def fit_creep(t, dnu, t0=None, max_nfev=2000) -> CreepFit:
    """Least-squares fit of the logarithmic creep law to a drift trace.

    With ``t0`` given the problem is linear in ``(dnu0, dnu0 * alpha)``;
    otherwise ``t0`` is profiled on a grid and refined with Levenberg-Marquardt.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(dnu, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise DomainError("time and detuning must be matching 1-D arrays")
    if t.size < 10:
        raise DomainError("creep fit needs at least 10 samples")

    if t0 is not None:
        if np.any(t - t0 < CREEP_FLOOR_S):
            raise DomainError("samples before the creep floor")
        ages = t - t0
        if ages.max() / ages.min() < 10.0:
            raise DomainError("samples must span at least one decade after the step")
        (a, b), cov, resid = _linear_creep_fit(t, y, t0)
        if abs(a) < 1e-12:
            raise FitError("dnu0 fitted to zero, creep rate undefined", {"dnu0": a, "slope": b})
        alpha = b / a
        ja = np.array([1.0, 0.0])
        jalpha = np.array([-b / a**2, 1.0 / a])
        errs = {
            "dnu0": math.sqrt(max(ja @ cov @ ja, 0.0)),
            "alpha": math.sqrt(max(jalpha @ cov @ jalpha, 0.0)),
            "t0": 0.0,
        }
        rms = float(np.sqrt(np.mean(resid**2)))
        return CreepFit(CreepModel(float(a), float(alpha), float(t0)), errs, rms, 1)

    t_first = float(t.min())
    span = float(t.max() - t_first)
    # parameterize t0 = t_first - exp(u) so the floor is never crossed
    lags = np.geomspace(CREEP_FLOOR_S, max(100.0 * span, 10.0), 120)
    sse = []
    for lag in lags:
        _, _, resid = _linear_creep_fit(t, y, t_first - lag)
        sse.append(float(resid @ resid))
    lag0 = lags[int(np.argmin(sse))]
    (a0, b0), _, _ = _linear_creep_fit(t, y, t_first - lag0)

    def residuals(p):
        a, b, u = p
        x = np.log10((t - t_first + np.exp(u)) / MINUTE)
        return a + b * x - y

    try:
        res = optimize.least_squares(
            residuals, [a0, b0, math.log(lag0)], method="lm", max_nfev=max_nfev, xtol=1e-15, ftol=1e-15
        )
    except ValueError as exc:
        raise FitError(str(exc)) from None
    if res.status <= 0:
        raise FitError(
            "creep fit did not converge",
            {"nfev": res.nfev, "status": res.status, "message": res.message, "cost": res.cost},
        )
    a, b, u = res.x
    if np.exp(u) < CREEP_FLOOR_S:
        u = math.log(CREEP_FLOOR_S)
    t0_fit = t_first - float(np.exp(u))
    if (t.max() - t0_fit) / (t_first - t0_fit) < 10.0:
        raise DomainError("samples must span at least one decade after the fitted step")
    if abs(a) < 1e-12:
        raise FitError("dnu0 fitted to zero, creep rate undefined", {"dnu0": a, "slope": b})
    dof = max(t.size - 3, 1)
    s2 = 2.0 * res.cost / dof
    jac = res.jac
    try:
        cov = s2 * np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.nan)
    jalpha = np.array([-b / a**2, 1.0 / a, 0.0])
    jt0 = np.array([0.0, 0.0, -np.exp(u)])
    errs = {
        "dnu0": math.sqrt(max(cov[0, 0], 0.0)),
        "alpha": math.sqrt(max(jalpha @ cov @ jalpha, 0.0)),
        "t0": math.sqrt(max(jt0 @ cov @ jt0, 0.0)),
    }
    rms = float(np.sqrt(np.mean(res.fun**2)))
    return CreepFit(CreepModel(float(a), float(b / a), t0_fit), errs, rms, int(res.nfev))


def save_drift(path, t, dnu, decimation=1):
    """Two-column drift trace (t_s, dnu_GHz)."""
    s = slice(None, None, max(int(decimation), 1))
    write_columns(path, ["t_s", "dnu_GHz"], [np.asarray(t)[s], np.asarray(dnu)[s]])
