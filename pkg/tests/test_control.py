import dataclasses
import math

import numpy as np
import pytest
from scipy import optimize

from freqlock.analysis import excess_deviation
from freqlock.control import (
    LockConfig,
    LockSimulation,
    PiController,
    gains_for_bandwidth,
    pi_update,
    rate_to_frequency_error,
    run_lock,
)
from freqlock.detection import DetectionChannel, instantaneous_rate
from freqlock.drift import CreepModel, fit_creep
from freqlock.errors import ConfigurationError
from freqlock.estimator import OccupancyWarning
from freqlock.spectra import slope_at


class TestDiscriminator:
    def test_zero(self):
        assert rate_to_frequency_error(0.0, 2200.0) == 0.0

    def test_sign_convention(self):
        assert rate_to_frequency_error(60.0, -1200.0) == pytest.approx(-0.05)

    def test_zero_slope(self):
        with pytest.raises(ConfigurationError):
            rate_to_frequency_error(1.0, 0.0)

    def test_recovers_true_detuning(self, qd1_arm):
        ch, lock, _ = qd1_arm
        true = 0.1
        dr = instantaneous_rate(ch, lock.nu_set + true) - lock.r_set
        assert rate_to_frequency_error(dr, lock.slope) == pytest.approx(true, rel=0.1)

    def test_linearization_small_in_linear_zone(self, qd1_arm):
        ch, lock, _ = qd1_arm
        fwhm = ch.curve.fwhm()
        for true in (-0.1 * fwhm, -0.03, 0.03, 0.1 * fwhm):
            dr = instantaneous_rate(ch, lock.nu_set + true) - lock.r_set
            lin = rate_to_frequency_error(dr, lock.slope)
            exact = optimize.brentq(
                lambda x: instantaneous_rate(ch, lock.nu_set + x) - lock.r_set - dr, -0.5 * fwhm, 0.5 * fwhm
            )
            assert exact == pytest.approx(true, abs=1e-9)
            if abs(true) <= 0.03:
                # at typical locked residuals the error is below 1 %
                assert abs(lin - exact) < 0.01 * abs(exact)


class TestPi:
    def test_idle(self):
        assert pi_update(PiController(1.0, 1.0), 0.0, 0.1) == 0.0

    def test_pure_proportional(self):
        c = PiController(2.0, 0.0)
        assert [pi_update(c, 0.5, 0.1) for _ in range(3)] == [1.0, 1.0, 1.0]

    def test_pure_integral_ramp_and_clamp(self):
        c = PiController(0.0, 3.0, v_min=-1.0, v_max=1.0)
        out = [pi_update(c, 0.5, 0.1) for _ in range(10)]
        np.testing.assert_allclose(out[:6], 0.15 * np.arange(1, 7))
        assert out[-1] == 1.0
        assert c.integrator == 1.0
        assert c.saturated

    def test_integrator_stays_in_limits(self):
        c = PiController(1.0, 100.0, v_min=-2.0, v_max=2.0)
        rng = np.random.default_rng(0)
        for e in rng.normal(0, 5, 200):
            v = pi_update(c, e, 0.1)
            assert -2.0 <= c.integrator <= 2.0
            assert -2.0 <= v <= 2.0

    def test_bad_step(self):
        with pytest.raises(ConfigurationError):
            PiController(1.0, 1.0).update(1.0, 0.0)

    def test_gain_rule(self):
        kp, ki = gains_for_bandwidth(0.03, 1.0, 10.0)
        assert ki == pytest.approx(2 * math.pi * 0.03 / 10.0)
        assert kp == pytest.approx(ki * 1.0)


def sim_for(arm, **kw):
    ch, lock, mon = arm
    return LockSimulation(ch, kw.pop("lock", lock), monitor=kw.pop("monitor", mon), **kw)


class TestConfiguration:
    def test_corner_below_bandwidth(self, qd1_arm):
        with pytest.raises(ConfigurationError):
            sim_for(qd1_arm, tau_filter=10.0).resolved()

    def test_update_too_slow(self, qd1_arm):
        lock = dataclasses.replace(qd1_arm[1], update_period=5.0)
        with pytest.raises(ConfigurationError):
            sim_for(qd1_arm, lock=lock).resolved()

    def test_creep_floor(self, qd1_arm):
        with pytest.raises(ConfigurationError):
            sim_for(qd1_arm, creep=CreepModel(t0=0.0)).resolved()

    def test_lock_config_invariants(self):
        with pytest.raises(ConfigurationError):
            LockConfig(3600, 0.0, 0.0)
        with pytest.raises(ConfigurationError):
            LockConfig(3600, 0.0, 1.0, polarity=0)

    def test_occupancy_warning(self, qd1_arm):
        with pytest.warns(OccupancyWarning):
            run_lock(sim_for(qd1_arm, tau_cycle=1e-3), 1.0)


class TestClosedLoop:
    def test_null_run_unbiased(self, qd1_arm):
        tr = run_lock(sim_for(qd1_arm), 3000.0, seed=3)
        r = tr.residual
        tau = 1 / (2 * math.pi * 0.03)
        n_eff = (tr.t[-1] - tr.t[0]) / (2 * tau)
        se = r.std() / math.sqrt(n_eff)
        assert abs(r.mean()) < 3 * se
        assert not tr.diverged

    def test_null_deterministic_stays_put(self, qd1_arm):
        tr = run_lock(sim_for(qd1_arm, deterministic=True), 600.0)
        assert np.max(np.abs(tr.residual)) < 1e-9

    def test_step_response_first_order(self, qd1_arm):
        step = 0.05
        lock = dataclasses.replace(qd1_arm[1], step_ghz=step, step_time=20.0)
        tr = run_lock(sim_for(qd1_arm, lock=lock, deterministic=True), 120.0)
        t = tr.t - 20.0
        nu = tr.nu
        tau = 1 / (2 * math.pi * 0.03)
        t63 = t[np.argmax(nu >= (1 - math.exp(-1)) * step)]
        t90 = t[np.argmax(nu >= 0.9 * step)]
        assert t63 == pytest.approx(tau, rel=0.3)
        assert t90 == pytest.approx(math.log(10) * tau, rel=0.3)
        assert nu[-1] == pytest.approx(step, rel=0.01)

    def test_bandwidth_scales_response(self, qd1_arm):
        lock = dataclasses.replace(qd1_arm[1], step_ghz=0.05, step_time=10.0, target_bandwidth=0.06)
        tr = run_lock(sim_for(qd1_arm, lock=lock, deterministic=True), 60.0)
        t63 = (tr.t - 10.0)[np.argmax(tr.nu >= (1 - math.exp(-1)) * 0.05)]
        assert t63 == pytest.approx(1 / (2 * math.pi * 0.06), rel=0.3)

    def test_negative_slope_converges(self, qd1_curve):
        curve = qd1_curve
        grid = curve.nu[1:-1]
        nu_set = float(grid[np.argmin(slope_at(curve, grid))])
        slope = float(slope_at(curve, nu_set))
        assert slope < 0
        r_qd = 3600.0 / float(curve(nu_set))
        ch = DetectionChannel(r_qd, curve)
        lock = LockConfig(3600.0, nu_set, slope * r_qd, step_ghz=0.05, step_time=5.0)
        tr = run_lock(LockSimulation(ch, lock, deterministic=True), 80.0)
        assert tr.nu[-1] == pytest.approx(0.05, rel=0.02)
        assert not tr.diverged

    def test_flipped_sign_diverges(self, qd1_arm):
        lock = dataclasses.replace(qd1_arm[1], polarity=-1)
        tr = run_lock(sim_for(qd1_arm, lock=lock), 600.0, seed=1)
        assert tr.diverged
        assert tr.t[-1] < 599.0

    def test_deterministic_per_seed(self, qd1_arm):
        sim = sim_for(qd1_arm, creep=CreepModel(0.9, 0.556, -1.0))
        a = run_lock(sim, 300.0, seed=11)
        b = run_lock(sim, 300.0, seed=11)
        c = run_lock(sim, 300.0, seed=12)
        assert np.array_equal(a.residual, b.residual)
        assert np.array_equal(a.monitor_counts, b.monitor_counts)
        assert not np.array_equal(a.residual, c.residual)

    def test_creep_only_locked_below_30_mhz(self, qd1_arm):
        sim = sim_for(qd1_arm, creep=CreepModel(0.9, 0.556, -1.0))
        tr = run_lock(sim, 6000.0, seed=4)
        dev = excess_deviation(tr.monitor_bins(0.5, 60.0), 0.5, tr.monitor_slope)
        assert dev < 30.0

    def test_open_loop_follows_creep(self, qd1_arm):
        truth = CreepModel(0.9, 0.556, -1.0)
        sim = sim_for(qd1_arm, creep=truth, lock_enabled=False)
        tr = run_lock(sim, 6000.0, seed=5)
        fit = fit_creep(tr.t + 0.5 * tr.update_period, tr.nu, t0=-1.0)
        assert fit.model.dnu0 == pytest.approx(truth.dnu0, rel=0.05)
        assert fit.model.alpha == pytest.approx(truth.alpha, rel=0.05)

    def test_trace_export(self, qd1_arm, tmp_path):
        tr = run_lock(sim_for(qd1_arm), 60.0, seed=0)
        tr.save(tmp_path / "lock.tsv", decimation=10)
        lines = (tmp_path / "lock.tsv").read_text().splitlines()
        assert lines[1] == "# t_s\tdnu_true_GHz\trate_est_cps\tv_ctrl_V\tdnu_residual_GHz"
        assert len(lines) == 2 + 60
