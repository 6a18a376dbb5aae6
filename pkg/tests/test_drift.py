import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqlock.analysis import welch_psd
from freqlock.drift import (
    ActuatorModel,
    CreepModel,
    NoiseGenerator,
    NoiseModel,
    SaturationWarning,
    actuator_offset,
    calibrate_creep,
    creep_detuning,
    fit_creep,
    sample_noise,
)
from freqlock.errors import ConfigurationError, DomainError, FitError


class TestCreep:
    def test_one_minute_gives_dnu0(self):
        assert creep_detuning(CreepModel(0.9, 0.556, 0.0), 60.0) == pytest.approx(0.9)

    def test_ten_minutes(self):
        m = CreepModel(0.9, 0.556, 5.0)
        assert creep_detuning(m, 605.0) == pytest.approx(0.9 * 1.556)

    def test_hundred_minutes(self):
        assert creep_detuning(CreepModel(0.9, 0.556, 0.0), 6000.0) == pytest.approx(1.90, abs=0.005)

    def test_before_floor_rejected(self):
        with pytest.raises(DomainError):
            creep_detuning(CreepModel(t0=10.0), 10.5)

    def test_at_step_rejected(self):
        with pytest.raises(DomainError):
            creep_detuning(CreepModel(t0=10.0), 10.0)

    @given(st.floats(0.05, 2.0), st.floats(0.01, 2.0))
    def test_monotone_and_concave(self, dnu0, alpha):
        m = CreepModel(dnu0, alpha, -1.0)
        t = np.linspace(0, 6000, 500)
        y = creep_detuning(m, t)
        assert np.all(np.diff(y) > 0)
        assert np.all(np.diff(y, 2) < 0)

    def test_calibration_hits_both_ends(self):
        m = calibrate_creep(1.8, 6000.0)
        assert creep_detuning(m, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert creep_detuning(m, 6000.0) == pytest.approx(1.8)


class TestActuator:
    def test_empty_history(self):
        assert actuator_offset(ActuatorModel(), [], 100.0) == 0.0

    def test_static_step(self):
        assert actuator_offset(ActuatorModel(gain=10.0), [(0.0, 0.2)], 60.0) == pytest.approx(2.0)

    def test_opposite_steps_cancel(self):
        tmpl = CreepModel(0.05, 0.5, 0.0)
        m = ActuatorModel(creep_per_volt=tmpl)
        t = np.linspace(1, 1000, 50)
        np.testing.assert_allclose(actuator_offset(m, [(0.0, 1.0), (0.0, -1.0)], t), 0.0, atol=1e-15)

    def test_creep_scales_with_step(self):
        m = ActuatorModel(gain=1.0, creep_per_volt=CreepModel(0.05, 0.5, 0.0))
        one = actuator_offset(m, [(0.0, 1.0)], 600.0) - 1.0
        two = actuator_offset(m, [(0.0, 2.0)], 600.0) - 2.0
        assert two == pytest.approx(2 * one)
        assert one > 0

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_superposition(self, dv1, dv2):
        m = ActuatorModel(gain=4.0, creep_per_volt=CreepModel(0.02, 0.3, 0.0))
        t = np.array([120.0, 900.0, 4000.0])
        both = actuator_offset(m, [(0.0, dv1), (60.0, dv2)], t)
        sep = actuator_offset(m, [(0.0, dv1)], t) + actuator_offset(m, [(60.0, dv2)], t)
        np.testing.assert_allclose(both, sep, atol=1e-12)

    def test_saturation_flagged_not_thrown(self):
        m = ActuatorModel(gain=1.0, v_min=-1.0, v_max=1.0)
        with pytest.warns(SaturationWarning):
            out = actuator_offset(m, [(0.0, 5.0)], 10.0)
        assert out == pytest.approx(1.0)

    def test_unordered_steps_rejected(self):
        with pytest.raises(DomainError):
            actuator_offset(ActuatorModel(), [(5.0, 1.0), (1.0, 1.0)], 10.0)


class TestNoise:
    def test_silent_model(self):
        x = sample_noise(NoiseModel(), 100.0, 0.1, np.random.default_rng(0))
        assert np.all(x == 0)

    def test_step_too_coarse(self):
        with pytest.raises(ConfigurationError):
            NoiseGenerator(NoiseModel(h_white=1.0, f_high=0.5), 1.0)

    def test_white_level(self):
        h = 1e-3
        x = sample_noise(NoiseModel(h_white=h), 2.0e5, 0.1, np.random.default_rng(1))
        psd = welch_psd(x, 0.1, segment_length=4096)
        band = (psd.frequencies > 0.01) & (psd.frequencies < 4.0)
        level = psd.density[band]
        assert 10 * np.log10(np.mean(level) / h) == pytest.approx(0.0, abs=1.0)

    def test_flicker_slope(self):
        x = sample_noise(
            NoiseModel(h_flicker=1e-4, f_low=1e-4, f_high=1.0), 1.0e6, 0.4, np.random.default_rng(2)
        )
        psd = welch_psd(x, 0.4, segment_length=2**15)
        assert psd.loglog_slope(1e-3, 0.3) == pytest.approx(-1.0, abs=0.1)

    def test_flicker_level(self):
        h = 1e-4
        x = sample_noise(NoiseModel(h_flicker=h, f_low=1e-4, f_high=1.0), 1.0e6, 0.4, np.random.default_rng(3))
        psd = welch_psd(x, 0.4, segment_length=2**15)
        band = (psd.frequencies > 3e-3) & (psd.frequencies < 0.1)
        ratio = np.mean(psd.density[band] * psd.frequencies[band]) / h
        assert 10 * np.log10(ratio) == pytest.approx(0.0, abs=1.0)

    def test_same_seed_identical(self):
        m = NoiseModel(h_flicker=1e-4, h_white=1e-5)
        a = sample_noise(m, 1000.0, 0.1, np.random.default_rng(7))
        b = sample_noise(m, 1000.0, 0.1, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_different_seeds_uncorrelated(self):
        m = NoiseModel(h_white=1e-5)
        a = sample_noise(m, 1e4, 0.1, np.random.default_rng(1))
        b = sample_noise(m, 1e4, 0.1, np.random.default_rng(2))
        assert a.size == 100000
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.05

    def test_streaming_matches_single_block(self):
        m = NoiseModel(h_flicker=1e-4)
        g1 = NoiseGenerator(m, 0.1, np.random.default_rng(4))
        whole = g1.sample(1000)
        g2 = NoiseGenerator(m, 0.1, np.random.default_rng(4))
        parts = np.concatenate([g2.sample(400), g2.sample(600)])
        assert np.array_equal(whole, parts)

    def test_bad_band(self):
        with pytest.raises(ConfigurationError):
            NoiseModel(h_flicker=1.0, f_low=1.0, f_high=0.5)


def synthetic(dnu0=0.9, alpha=0.556, t0=-30.0, sigma=0.0, seed=0, n=600):
    t = np.linspace(10.0, 6000.0, n)
    y = creep_detuning(CreepModel(dnu0, alpha, t0), t)
    if sigma:
        y = y + np.random.default_rng(seed).normal(0, sigma, n)
    return t, y


class TestFitCreep:
    def test_noiseless_known_t0(self):
        t, y = synthetic()
        fit = fit_creep(t, y, t0=-30.0)
        assert fit.model.dnu0 == pytest.approx(0.9, rel=1e-6)
        assert fit.model.alpha == pytest.approx(0.556, rel=1e-6)
        assert isinstance(fit.model.dnu0, float)

    def test_noiseless_unknown_t0(self):
        t, y = synthetic()
        fit = fit_creep(t, y)
        assert fit.model.dnu0 == pytest.approx(0.9, rel=1e-6)
        assert fit.model.alpha == pytest.approx(0.556, rel=1e-6)
        assert fit.model.t0 == pytest.approx(-30.0, rel=1e-4)

    def test_flat_trace(self):
        t = np.linspace(10, 6000, 100)
        fit = fit_creep(t, np.full(t.size, 0.4), t0=0.0)
        assert fit.model.dnu0 == pytest.approx(0.4)
        assert fit.model.alpha == pytest.approx(0.0, abs=1e-12)

    def test_noisy_recovery_with_errors(self):
        t, y = synthetic(sigma=0.03, seed=5)
        fit = fit_creep(t, y, t0=-30.0)
        assert fit.model.dnu0 == pytest.approx(0.9, rel=0.05)
        assert fit.model.alpha == pytest.approx(0.556, rel=0.05)
        assert 0 < fit.errors["alpha"] < 0.05
        assert fit.residual_rms == pytest.approx(0.03, rel=0.15)

    def test_too_few_samples(self):
        with pytest.raises(DomainError):
            fit_creep(np.arange(5.0) + 10, np.ones(5))

    def test_short_span_rejected(self):
        t = np.linspace(1000, 1500, 50)
        with pytest.raises(DomainError):
            fit_creep(t, np.ones(50), t0=0.0)

    def test_zero_offset_is_fit_error(self):
        t = np.linspace(10, 6000, 100)
        with pytest.raises(FitError):
            fit_creep(t, np.zeros(100), t0=0.0)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 3.0), st.floats(0.05, 1.5))
    def test_roundtrip(self, dnu0, alpha):
        t, y = synthetic(dnu0, alpha, t0=-1.0)
        fit = fit_creep(t, y, t0=-1.0)
        assert fit.model.dnu0 == pytest.approx(dnu0, rel=1e-6)
        assert fit.model.alpha == pytest.approx(alpha, rel=1e-6)
