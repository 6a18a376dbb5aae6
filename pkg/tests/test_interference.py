import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from scipy.integrate import quad

from freqlock.errors import DomainError, NoSolutionError, UndefinedVisibilityError
from freqlock.interference import (
    PARALLEL,
    PERPENDICULAR,
    EmitterParams,
    HomHistogram,
    StatisticsWarning,
    dark_correct,
    hom_visibility,
    indistinguishability,
    invert_visibility,
    peak_areas,
    save_visibility,
    synthesize_histogram,
    tpi_visibility,
    visibility_from_areas,
    visibility_sigma,
    windowed_visibility,
)

QD1 = EmitterParams(155.0, 153.0)
QD2 = EmitterParams(187.0, 123.0)


class TestIndistinguishability:
    def test_measured_emitters(self):
        assert indistinguishability(QD1) == pytest.approx(0.4935, abs=1e-4)
        assert indistinguishability(QD2) == pytest.approx(0.3289, abs=1e-4)

    def test_coherence_limit(self):
        assert indistinguishability(EmitterParams(100.0, 200.0)) == pytest.approx(1.0)

    def test_coherence_above_limit_rejected(self):
        with pytest.raises(DomainError):
            EmitterParams(100.0, 201.0)

    @settings(max_examples=100)
    @given(st.floats(20.0, 2000.0), st.floats(0.01, 1.0))
    def test_identical_emitters_match_indistinguishability(self, t1, frac):
        e = EmitterParams(t1, 2.0 * t1 * frac)
        assert tpi_visibility(e, e, 0.0) == pytest.approx(indistinguishability(e), abs=1e-12)


class TestDetunedVisibility:
    def test_zero_detuning(self):
        assert tpi_visibility(QD1, QD2, 0.0) == pytest.approx(0.39874, abs=1e-5)

    def test_quarter_visibility_by_bisection(self):
        oracle = optimize.bisect(lambda x: tpi_visibility(QD1, QD2, x) - 0.25, 0.0, 10.0, xtol=1e-12)
        assert oracle == pytest.approx(1.80044, abs=1e-5)
        assert invert_visibility(0.25, QD1, QD2) == pytest.approx(oracle, abs=1e-9)

    @given(st.floats(-20.0, 20.0))
    def test_symmetric(self, d):
        assert tpi_visibility(QD1, QD2, d) == pytest.approx(tpi_visibility(QD2, QD1, -d), rel=1e-12)

    def test_monotone_in_detuning(self):
        v = tpi_visibility(QD1, QD2, np.linspace(0, 20, 2001))
        assert np.all(np.diff(v) < 0)
        assert v[-1] < 0.01

    @pytest.mark.parametrize("d", [0.1, 1.0, 5.0])
    def test_inversion_roundtrip(self, d):
        assert invert_visibility(tpi_visibility(QD1, QD2, d), QD1, QD2) == pytest.approx(d, rel=1e-6)

    @pytest.mark.parametrize("v", [0.0, -0.1, 0.41])
    def test_inversion_out_of_range(self, v):
        with pytest.raises(NoSolutionError):
            invert_visibility(v, QD1, QD2)

    def test_inversion_at_maximum(self):
        assert invert_visibility(tpi_visibility(QD1, QD2, 0.0), QD1, QD2) == pytest.approx(0.0, abs=1e-6)


class TestAreas:
    def test_basic(self):
        assert visibility_from_areas(100.0, 60.0) == pytest.approx(0.4)

    def test_fluctuation_negative(self):
        assert visibility_from_areas(100.0, 120.0) == pytest.approx(-0.2)

    def test_zero_perpendicular(self):
        with pytest.raises(UndefinedVisibilityError):
            visibility_from_areas(0.0, 1.0)

    def test_negative_area(self):
        with pytest.raises(DomainError):
            visibility_from_areas(10.0, -1.0)


class TestWindowed:
    def test_flat_detuning(self):
        t = np.linspace(0, 100, 1001)
        pts = windowed_visibility(t, np.full(t.size, 0.5), QD1, QD2, 10.0)
        expect = tpi_visibility(QD1, QD2, 0.5)
        np.testing.assert_allclose([p.v for p in pts], expect, rtol=1e-12)
        assert pts[0].t == pytest.approx(10.0)
        assert pts[-1].t == pytest.approx(100.0)

    def test_average_within_instantaneous_range(self):
        t = np.linspace(0, 100, 2001)
        dnu = 0.6 * np.sin(t / 7.0) + 0.02 * t
        inst = tpi_visibility(QD1, QD2, dnu)
        for p in windowed_visibility(t, dnu, QD1, QD2, 15.0, step=1.0):
            sel = (t >= p.t - 15.0 - 1e-9) & (t <= p.t + 1e-9)
            assert inst[sel].min() - 1e-12 <= p.v <= inst[sel].max() + 1e-12

    def test_short_window_tracks_instantaneous(self):
        t = np.linspace(0, 100, 100_001)
        dnu = 1.8 * t / 100
        pts = windowed_visibility(t, dnu, QD1, QD2, 1e-3, step=5.0)
        for p in pts:
            assert p.v == pytest.approx(tpi_visibility(QD1, QD2, 1.8 * p.t / 100), abs=1e-4)

    def test_matches_quadrature(self):
        t = np.linspace(0, 60, 6001)
        dnu = 0.03 * t
        pts = windowed_visibility(t, dnu, QD1, QD2, 20.0, step=10.0)
        for p in pts:
            ref = quad(lambda x: tpi_visibility(QD1, QD2, 0.03 * x), p.t - 20, p.t)[0] / 20
            assert p.v == pytest.approx(ref, rel=1e-6)

    def test_span_shorter_than_window(self):
        t = np.linspace(0, 5, 51)
        with pytest.raises(DomainError):
            windowed_visibility(t, np.zeros(51), QD1, QD2, 10.0)

    def test_export(self, tmp_path):
        t = np.linspace(0, 30, 31)
        save_visibility(tmp_path / "v.tsv", windowed_visibility(t, np.zeros(31), QD1, QD2, 10.0, step=10.0))
        rows = [line for line in (tmp_path / "v.tsv").read_text().splitlines() if not line.startswith("#")]
        assert len(rows) == 3


RATES = (5000.0, 5000.0)
DARKS = (104.0, 134.0)


def hist(v, seed, t_acq=2400.0, darks=(0.0, 0.0), **kw):
    return synthesize_histogram(v, RATES, t_acq, np.random.default_rng(seed), dark_rates=darks, **kw)


def measure(h, darks=(0.0, 0.0)):
    return hom_visibility(dark_correct(h, darks, RATES))


class TestHistogram:
    def test_side_peak_budget(self):
        h = hist(0.4, 0)
        a = peak_areas(h.counts_perp, h)
        expect = 5000.0 * 5000.0 * (1e3 / 76) * 1e-9 * 2400.0
        assert a.side.mean() == pytest.approx(expect, rel=0.02)
        assert a.central == pytest.approx(0.5 * expect, rel=0.1)

    def test_peaks_centered_on_period(self):
        h = hist(0.0, 1)
        for j, mask in zip(range(-h.n_side, h.n_side + 1), h.peak_masks()):
            w = h.counts_perp[mask]
            centroid = np.sum(w * h.centers[mask]) / w.sum()
            assert centroid == pytest.approx(j * h.rep_period, abs=0.02)

    def test_perfect_interference_empties_parallel_peak(self):
        h = hist(1.0, 2)
        a = peak_areas(h.counts_par, h)
        assert a.central == 0.0
        v, s = measure(h)
        assert v == 1.0
        assert s == 0.0

    def test_no_interference(self):
        vs = [measure(hist(0.0, s))[0] for s in range(50)]
        _, sigma = measure(hist(0.0, 0))
        assert abs(np.mean(vs)) < 3 * sigma / math.sqrt(50)

    def test_normalized_side_peaks(self):
        h = hist(0.4, 3)
        n = h.normalized(PERPENDICULAR)
        a = peak_areas(n, h)
        assert a.side.mean() == pytest.approx(1.0, rel=1e-12)
        assert a.central == pytest.approx(0.5, abs=0.05)

    def test_zero_darks_correction_is_identity(self):
        h = hist(0.4, 4)
        c = dark_correct(h, (0.0, 0.0), RATES)
        raw = peak_areas(h.counts(PARALLEL), h)
        assert c.parallel.central == raw.central
        np.testing.assert_array_equal(c.parallel.side, raw.side)

    def test_pure_dark_floor_removed(self):
        with pytest.warns(StatisticsWarning):
            h = synthesize_histogram(
                0.0, (0.0, 0.0), 2400.0, np.random.default_rng(5), dark_rates=(500.0, 500.0)
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StatisticsWarning)
            # the floor scales with the signal rates, which here are the darks themselves
            c = dark_correct(h, (500.0, 500.0), (0.0, 0.0))
        total = np.concatenate([c.perpendicular.side, [c.perpendicular.central]])
        raw = peak_areas(h.counts_perp, h)
        assert np.all(total <= np.concatenate([raw.side, [raw.central]]))
        assert abs(np.mean(total)) < 3 * math.sqrt(raw.central)

    def test_darks_do_not_shift_visibility(self):
        v0, s0 = measure(hist(0.41, 6))
        v1, s1 = measure(hist(0.41, 7, darks=DARKS), DARKS)
        assert abs(v1 - v0) < 2 * math.hypot(s0, s1)

    def test_invalid_inputs(self):
        with pytest.raises(DomainError):
            hist(1.2, 0)
        with pytest.raises(DomainError):
            hist(0.4, 0, blink=0.0)
        with pytest.raises(DomainError):
            dark_correct(hist(0.4, 0), (-1.0, 0.0), RATES)

    def test_undefined_when_perpendicular_empty(self):
        h = hist(0.4, 8)
        empty = HomHistogram(h.edges, h.counts_par, np.zeros_like(h.counts_perp), h.rep_period, h.half_window, h.t_acq, h.n_side)
        with pytest.raises(UndefinedVisibilityError):
            hom_visibility(dark_correct(empty, (0.0, 0.0), RATES), normalize=False)

    def test_export(self, tmp_path):
        h = hist(0.4, 9)
        h.save(tmp_path / "h.tsv")
        lines = (tmp_path / "h.tsv").read_text().splitlines()
        assert "bin_center_ns\tcounts_parallel\tcounts_perpendicular" in lines[1]


class TestRecovery:
    def test_unbiased_and_calibrated_sigma(self):
        v_true = 0.41
        rng = np.random.default_rng(10)
        vs, ss = [], []
        for _ in range(1000):
            h = synthesize_histogram(v_true, RATES, 2400.0, rng, dark_rates=DARKS)
            v, s = measure(h, DARKS)
            vs.append(v)
            ss.append(s)
        vs = np.array(vs)
        assert abs(vs.mean() - v_true) < vs.std() / 3
        assert np.mean(ss) == pytest.approx(vs.std(), rel=0.15)

    def test_predicted_sigma(self):
        side = 5000.0 * 5000.0 * (1e3 / 76) * 1e-9 * 2400.0
        rng = np.random.default_rng(11)
        vs = [measure(synthesize_histogram(0.41, RATES, 2400.0, rng))[0] for _ in range(300)]
        assert visibility_sigma(0.41, side) == pytest.approx(np.std(vs), rel=0.15)

    def test_sigma_budget_invalid(self):
        with pytest.raises(DomainError):
            visibility_sigma(0.4, 0.0)
