"""Wire the modules into two-emitter lock experiments and write their reports."""

from __future__ import annotations

import math
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .control import LockConfig, LockSimulation, LockTrace, run_lock
from .detection import DetectionChannel
from .drift import ActuatorModel, CreepModel, NoiseModel, calibrate_creep, fit_creep, save_drift
from .estimator import save_estimate
from .errors import ConfigurationError, DomainError, FitError, InconclusiveError, NoSolutionError
from .interference import (
    EmitterParams,
    HomHistogram,
    coincidence_budget,
    dark_correct,
    hom_visibility,
    invert_visibility,
    save_visibility,
    synthesize_histogram,
    tpi_visibility,
    visibility_sigma,
    windowed_visibility,
)
from .scenario import ARMS, Scenario, load_scenario, override, serialize_scenario
from .spectra import STEEPEST, FilterCurve, FilterSettings, SetPoint, convolve, find_set_point, lorentzian_from_coherence

# Append-only: a new subsystem gets the next index, so existing streams never move.
SEED_NAMES = ("arm1", "arm2", "hom", "hom_free")


def derive_seed(master, name):
    """Independent seed stream for one named subsystem."""
    if name not in SEED_NAMES:
        raise ConfigurationError(f"unknown seed stream {name!r}")
    return np.random.SeedSequence(int(master), spawn_key=(SEED_NAMES.index(name),))


@dataclass
class Arm:
    index: int
    emitter: EmitterParams
    curve: FilterCurve
    set_point: SetPoint
    locked: LockSimulation
    free: LockSimulation


def _emitters(scn: Scenario):
    return tuple(EmitterParams(scn.arm(k)[0].t1_ps, scn.arm(k)[0].t2_ps) for k in ARMS)


def build_arm(scn: Scenario, k) -> Arm:
    em, fl, dr, lk = scn.arm(k)
    emitters = _emitters(scn)
    if fl.table:
        laser = FilterCurve.load(scn.resolve(fl.table))
    else:
        laser = FilterSettings(
            temperature=fl.temperature_c,
            field=fl.field_mt,
            center_coeff=fl.center_coeff_mhz_per_mt,
            width_coeff=fl.width_coeff_mhz_per_mt,
            reference_center=fl.reference_center_ghz,
            reference_width=fl.reference_width_ghz,
            reference_field=fl.reference_field_mt,
            amplitude=fl.amplitude,
            lorentz_fraction=fl.lorentz_fraction,
        ).curve()
    curve = convolve(laser, lorentzian_from_coherence(em.t2_ps))
    if fl.criterion == STEEPEST:
        sp = find_set_point(curve)
    else:
        sp = find_set_point(curve, fl.criterion, fl.target_transmission)
    r_qd = em.r_set_cps / sp.transmission
    channel = DetectionChannel(r_qd, curve, dark_rate=em.dark_cps)
    monitor = None
    if em.monitor_rate_cps > 0:
        monitor = DetectionChannel(em.monitor_rate_cps / sp.transmission, curve)

    creep = None
    if dr.creep:
        if dr.creep_target_visibility > 0:
            try:
                dnu_end = invert_visibility(dr.creep_target_visibility, *emitters)
            except NoSolutionError as exc:
                raise ConfigurationError(f"[drift{k}] creep_target_visibility: {exc}") from None
            creep = calibrate_creep(dnu_end, 60.0 * dr.creep_target_min, -dr.creep_t0_s)
        else:
            creep = CreepModel(dr.creep_dnu0_ghz, dr.creep_alpha, dr.creep_t0_s)
    noise = None
    if dr.h_flicker_ghz2 > 0 or dr.h_white_ghz2_per_hz > 0:
        noise = NoiseModel(dr.h_flicker_ghz2, dr.h_white_ghz2_per_hz, dr.f_low_hz, dr.f_high_hz)

    lock = LockConfig(
        r_set=em.r_set_cps,
        nu_set=sp.nu,
        slope=sp.slope * r_qd,
        update_period=lk.update_period_s,
        target_bandwidth=1e-3 * lk.bandwidth_mhz,
        polarity=lk.polarity,
        step_ghz=lk.step_ghz,
        step_time=lk.step_time_s,
    )
    actuator = ActuatorModel(lk.gain_ghz_per_v, lk.v_min_v, lk.v_max_v)

    def sim(enabled):
        return LockSimulation(
            channel,
            lock,
            actuator,
            tau_cycle=lk.tau_cycle_s,
            tau_filter=lk.tau_filter_s or None,
            creep=creep,
            noise=noise,
            monitor=monitor,
            lock_enabled=enabled,
            deterministic=lk.deterministic,
            watchdog_ghz=lk.watchdog_ghz or None,
        )

    locked = sim(lk.enabled)
    locked.resolved()
    return Arm(k, emitters[k - 1], curve, sp, locked, sim(False))


def validate(scn: Scenario):
    """Build every arm without simulating; raises on any inconsistency."""
    return [build_arm(scn, k) for k in ARMS]


@dataclass
class Result:
    scenario: Scenario
    seed: int
    arms: list
    locked: list
    free: list
    summary: dict
    vis_lock: list = field(default_factory=list)
    vis_free: list = field(default_factory=list)
    instantaneous: Optional[tuple] = None
    hom_lock: Optional[HomHistogram] = None
    hom_free: Optional[HomHistogram] = None
    psd: Optional[analysis.PsdEstimate] = None
    shot_floor: float = float("nan")


def _mutual_detuning(traces):
    n = min(tr.t.size for tr in traces)
    return traces[0].t[:n], traces[0].nu[:n] - traces[1].nu[:n]


def _windowed(scn, times_s, dnu, emitters, budget_per_min):
    r = scn.run
    pts = windowed_visibility(times_s / 60.0, dnu, *emitters, r.window_min, r.window_step_min)
    side = budget_per_min * r.window_min
    for p in pts:
        p.sigma_v = visibility_sigma(p.v, side, scn.hom.blink, scn.hom.n_side) if side > 0 else 0.0
    return pts


def _arm_summary(out, prefix, tr: LockTrace, scn: Scenario):
    r = scn.run
    settle = 60.0 * r.settle_min
    out[f"{prefix}_diverged"] = tr.diverged
    out[f"{prefix}_saturated"] = tr.saturated
    sel = tr.t >= settle
    if tr.diverged or not sel.any():
        out[f"{prefix}_rms_mhz"] = math.nan
        out[f"{prefix}_mean_mhz"] = math.nan
        out[f"{prefix}_deviation_mhz"] = math.nan
        return
    out[f"{prefix}_rms_mhz"] = 1e3 * tr.residual_rms(settle)
    out[f"{prefix}_mean_mhz"] = 1e3 * float(np.mean(tr.residual[sel]))
    dev = math.nan
    if tr.monitor_counts is not None:
        bins = tr.monitor_bins(r.monitor_bin_s, settle)
        if bins.size >= 30:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                dev = analysis.excess_deviation(bins, r.monitor_bin_s, tr.monitor_slope)
    out[f"{prefix}_deviation_mhz"] = dev


def evaluate(scn: Scenario, seed=None) -> Result:
    """Run every experiment of a scenario and collect headline numbers."""
    seed = scn.run.seed if seed is None else int(seed)
    arms = validate(scn)
    duration = 60.0 * scn.run.duration_min
    emitters = _emitters(scn)
    summary = {"seed": seed, "duration_min": scn.run.duration_min}
    locked, free = [], []
    for arm in arms:
        ss = derive_seed(seed, f"arm{arm.index}")
        tau_f, kp, ki = arm.locked.resolved()
        p = f"arm{arm.index}"
        summary[f"{p}_nu_set_ghz"] = arm.set_point.nu
        summary[f"{p}_transmission_set"] = arm.set_point.transmission
        summary[f"{p}_slope_cps_per_ghz"] = arm.locked.lock.slope
        summary[f"{p}_r_qd_cps"] = arm.locked.channel.r_qd
        summary[f"{p}_tau_filter_s"] = tau_f
        summary[f"{p}_kp_v_per_ghz"] = kp
        summary[f"{p}_ki_v_per_ghz_s"] = ki
        tr = run_lock(arm.locked, duration, seed=ss)
        locked.append(tr)
        _arm_summary(summary, f"{p}_{'locked' if tr.locked else 'open'}", tr, scn)
        if scn.run.free_running_reference:
            trf = run_lock(arm.free, duration, seed=ss)
            free.append(trf)
            _arm_summary(summary, f"{p}_free", trf, scn)
            if arm.free.creep is not None:
                try:
                    fit = fit_creep(trf.t + 0.5 * trf.update_period, trf.nu, t0=arm.free.creep.t0)
                    summary[f"{p}_free_fit_dnu0_ghz"] = fit.model.dnu0
                    summary[f"{p}_free_fit_alpha"] = fit.model.alpha
                    summary[f"{p}_free_fit_rms_mhz"] = 1e3 * fit.residual_rms
                except (FitError, DomainError):
                    summary[f"{p}_free_fit_dnu0_ghz"] = math.nan
                    summary[f"{p}_free_fit_alpha"] = math.nan
                    summary[f"{p}_free_fit_rms_mhz"] = math.nan

    res = Result(scn, seed, arms, locked, free, summary)

    # noise spectrum of the first arm's photon rate, free-running when available
    src = free[0] if free else locked[0]
    rate = src.counts / src.update_period
    seg = min(scn.run.psd_segment, rate.size // 2)
    summary["psd_source"] = "free" if free else "locked"
    if seg >= 16:
        res.psd = analysis.welch_psd(rate, src.update_period, segment_length=seg)
        res.shot_floor = analysis.shot_noise_floor(float(rate.mean()))
        try:
            bw = analysis.recommend_bandwidth(res.psd, res.shot_floor)
            summary["recommended_bandwidth_mhz"] = 1e3 * bw
        except InconclusiveError:
            summary["recommended_bandwidth_mhz"] = math.nan

    h = scn.hom
    budget_per_min = coincidence_budget((h.rate1_cps, h.rate2_cps), h.rep_period_ns, 60.0)
    summary["v_zero_detuning"] = tpi_visibility(*emitters, 0.0)
    hom_v = {}
    for label, traces in (("lock", locked), ("free", free)):
        if not traces or any(tr.diverged for tr in traces):
            continue
        t, dnu = _mutual_detuning(traces)
        if t[-1] - t[0] < 60.0 * scn.run.window_min:
            continue
        pts = _windowed(scn, t + 0.5 * traces[0].update_period, dnu, emitters, budget_per_min)
        setattr(res, f"vis_{label}", pts)
        vs = np.array([p.v for p in pts])
        summary[f"vis_{label}_first"] = vs[0]
        summary[f"vis_{label}_last"] = vs[-1]
        summary[f"vis_{label}_min"] = vs.min()
        summary[f"vis_{label}_max"] = vs.max()
        hom_v[label] = vs[-1]
    if res.vis_lock and res.vis_free:
        n = min(len(res.vis_lock), len(res.vis_free))
        summary["lock_above_free"] = all(res.vis_lock[i].v >= res.vis_free[i].v for i in range(n))
    if locked and free and not any(tr.diverged for tr in locked):
        tl, dl = _mutual_detuning(locked)
        tf, df = _mutual_detuning(free)
        n = min(tl.size, tf.size)
        res.instantaneous = (tl[:n] / 60.0, tpi_visibility(*emitters, dl[:n]), tpi_visibility(*emitters, df[:n]))

    for label, stream in (("lock", "hom"), ("free", "hom_free")):
        v_true = h.v_true if h.v_true >= 0 else hom_v.get(label)
        if v_true is None:
            continue
        hist, v, s = run_hom(scn, v_true, derive_seed(seed, stream))
        setattr(res, f"hom_{label}", hist)
        summary[f"hom_{label}_v_true"] = v_true
        summary[f"hom_{label}_v"] = v
        summary[f"hom_{label}_sigma"] = s
    return res


def run_hom(scn: Scenario, v_true, seed):
    """Synthesize and analyse one HOM measurement from the ``[hom]`` settings."""
    h = scn.hom
    rng = np.random.default_rng(seed)
    rates = (h.rate1_cps, h.rate2_cps)
    darks = (h.dark1_cps, h.dark2_cps)
    hist = synthesize_histogram(
        v_true,
        rates,
        h.t_acq_s,
        rng,
        rep_period=h.rep_period_ns,
        n_side=h.n_side,
        blink=h.blink,
        t1=(scn.emitter1.t1_ps, scn.emitter2.t1_ps),
        dark_rates=darks,
        bins_per_period=h.bins_per_period,
        half_window=h.half_window_ns or None,
    )
    v, s = hom_visibility(dark_correct(hist, darks, rates))
    return hist, v, s


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{float(value):.6g}"
    return str(value)


def format_summary(summary):
    return "".join(f"{k}={_fmt(v)}\n" for k, v in summary.items())


def write_outputs(res: Result, directory: Path, figures=True):
    scn = res.scenario
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "scenario.scn").write_text(serialize_scenario(scn))
    dec = scn.run.decimation
    for tr, arm in zip(res.locked, res.arms):
        tr.save(directory / f"lock_arm{arm.index}.tsv", dec)
    for tr, arm in zip(res.free, res.arms):
        tr.save(directory / f"free_arm{arm.index}.tsv", dec)
    for tr, arm in zip(res.free or res.locked, res.arms):
        save_drift(directory / f"drift_arm{arm.index}.tsv", tr.t + 0.5 * tr.update_period, tr.dnu_true, dec)
    for tr, arm in zip(res.locked, res.arms):
        save_estimate(directory / f"estimate_arm{arm.index}.tsv", tr.t, tr.rate_est, dec)
    if res.vis_lock:
        save_visibility(directory / "visibility_lock.tsv", res.vis_lock)
    if res.vis_free:
        save_visibility(directory / "visibility_free.tsv", res.vis_free)
    if res.hom_lock is not None:
        res.hom_lock.save(directory / "hom_lock.tsv")
    if res.hom_free is not None:
        res.hom_free.save(directory / "hom_free.tsv")
    if res.psd is not None:
        res.psd.save(directory / "psd_arm1.tsv", unit="cps^2/Hz")
    (directory / "summary.txt").write_text(format_summary(res.summary))
    if figures and scn.run.figures:
        from . import plotting

        fig_dir = directory / "figures"
        fig_dir.mkdir(exist_ok=True)
        traces = [(f"arm {a.index} locked", tr) for a, tr in zip(res.arms, res.locked)]
        traces += [(f"arm {a.index} free-running", tr) for a, tr in zip(res.arms, res.free)]
        plotting.plot_lock(traces, fig_dir / "lock_traces.png")
        series = [(lbl, pts) for lbl, pts in (("locked", res.vis_lock), ("free-running", res.vis_free)) if pts]
        if series:
            inst = ()
            if res.instantaneous is not None:
                t, vl, vf = res.instantaneous
                inst = (("locked, instantaneous", t, vl), ("free-running, instantaneous", t, vf))
            plotting.plot_visibility(series, fig_dir / "visibility.png", inst)
        if res.hom_lock is not None:
            plotting.plot_histogram(res.hom_lock, fig_dir / "hom_lock.png", "locked")
        if res.hom_free is not None:
            plotting.plot_histogram(res.hom_free, fig_dir / "hom_free.png", "free-running")
        if res.psd is not None:
            plotting.plot_psd(res.psd, fig_dir / "psd_arm1.png", res.shot_floor)


def _publish(out_dir, name, writer):
    """Write into a scratch directory and move it into place only on success."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{name}.", dir=out_dir))
    try:
        writer(scratch)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    final = out_dir / name
    if final.exists():
        shutil.rmtree(final)
    scratch.rename(final)
    return final


def run_scenario(path, out_dir=None, seed=None, figures=True):
    """Run the scenario file at ``path``; return (result, artifact directory)."""
    scn = path if isinstance(path, Scenario) else load_scenario(path)
    name = Path(scn.source).stem if scn.source else "scenario"
    res = evaluate(scn, seed)
    target = _publish(out_dir or scn.run.out_dir, name, lambda d: write_outputs(res, d, figures))
    return res, target


def sweep(path, axis, values, out_dir=None, seed=None):
    """One summary row per value of ``axis`` (``section.key``)."""
    scn = path if isinstance(path, Scenario) else load_scenario(path)
    rows = []
    for value in values:
        res = evaluate(override(scn, axis, value), seed)
        rows.append({axis: value, **res.summary})
    if out_dir is not None:
        name = (Path(scn.source).stem if scn.source else "scenario") + "_sweep"

        def write(d):
            keys = list(dict.fromkeys(k for row in rows for k in row))
            lines = ["\t".join(keys)]
            lines += ["\t".join(_fmt(row.get(k, "")) for k in keys) for row in rows]
            (d / f"sweep_{axis.replace('.', '_')}.tsv").write_text("\n".join(lines) + "\n")

        _publish(out_dir, name, write)
    return rows

