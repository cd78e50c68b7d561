"""Teacher data, label corruption, and the reproducible sweep machinery."""

import numpy as np
import pytest

import contamrf.experiments as exp
from contamrf import (
    HuberCorruption,
    SweepConfig,
    Teacher,
    TeacherConfig,
    bias_variance_sweep,
    contamination_envelope_curves,
    derived_rng,
    generate_teacher_data,
    huber_contaminate,
    misspecification_sweep,
    peak_report,
)


def _small_sweep(**overrides):
    kw = dict(d=8, psi2=2.0, psi1_grid=(0.5, 1.0, 2.0, 3.0), lam=1e-4, phi=1.0,
              trials=6, test_points=25, master_seed=7,
              eta_levels=(0.05, 0.2), rho_levels=(0.0, 0.2))
    kw.update(overrides)
    return SweepConfig(**kw)


class TestDerivedRng:
    def test_same_key_same_stream(self):
        a = derived_rng(42, 1, 2, 3).standard_normal(5)
        b = derived_rng(42, 1, 2, 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        a = derived_rng(42, 1, 2, 3).standard_normal(5)
        b = derived_rng(42, 1, 2, 4).standard_normal(5)
        c = derived_rng(43, 1, 2, 3).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTeacher:
    def test_constant_teacher(self):
        cfg = TeacherConfig(d=4, kind="linear", beta0=2.5, noise_sd=0.0)
        ds = generate_teacher_data(cfg, 10, np.random.default_rng(0))
        np.testing.assert_array_equal(ds.y, np.full(10, 2.5))

    def test_linear_teacher_is_exact_when_noiseless(self):
        beta = np.array([1.0, -2.0, 0.5])
        cfg = TeacherConfig(d=3, kind="linear", beta0=0.3, beta=beta, noise_sd=0.0)
        teacher = Teacher.realize(cfg, np.random.default_rng(1))
        ds = teacher.sample(20, np.random.default_rng(2))
        np.testing.assert_allclose(ds.y, 0.3 + ds.X @ beta, atol=1e-14)

    def test_noise_variance_band(self):
        cfg = TeacherConfig(d=6, kind="linear", beta0=0.0, noise_sd=0.5)
        teacher = Teacher.realize(cfg, np.random.default_rng(3))
        ds = teacher.sample(10000, np.random.default_rng(4))
        resid = ds.y - teacher.f(ds.X)
        assert 0.23 <= np.var(resid) <= 0.27  # CLT band around 0.25

    def test_rf_teacher_is_frozen_and_reproducible(self):
        cfg = TeacherConfig(d=5)
        t1 = Teacher.realize(cfg, np.random.default_rng(9))
        t2 = Teacher.realize(cfg, np.random.default_rng(9))
        X = exp.sample_sphere(7, 5, np.random.default_rng(1))
        np.testing.assert_array_equal(t1.f(X), t2.f(X))
        assert t1.directions.shape == (10, 5)  # default 2*d features

    def test_dim_and_kind_validation(self):
        with pytest.raises(ValueError):
            TeacherConfig(d=0)
        with pytest.raises(ValueError):
            TeacherConfig(d=3, kind="tree")
        with pytest.raises(ValueError):
            TeacherConfig(d=3, kind="linear", beta=np.ones(2))
        with pytest.raises(ValueError):
            TeacherConfig(d=3, noise_sd=-0.1)


class TestHuberContaminate:
    def test_no_corruption(self):
        y = np.arange(5.0)
        out, mask = huber_contaminate(y, HuberCorruption(0.0, 10.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out, y)
        assert not mask.any()

    def test_certain_corruption(self):
        y = np.arange(5.0)
        out, mask = huber_contaminate(y, HuberCorruption(1.0, 3.0), np.random.default_rng(0))
        np.testing.assert_array_equal(out, y + 3.0)
        assert mask.all()

    def test_binomial_fraction_band(self):
        y = np.zeros(100_000)
        _, mask = huber_contaminate(y, HuberCorruption(0.1, 1.0), np.random.default_rng(5))
        assert 0.094 <= mask.mean() <= 0.106  # +-3 binomial standard errors

    def test_masks_nest_across_rho_on_shared_stream(self):
        y = np.zeros(1000)
        _, small = huber_contaminate(y, HuberCorruption(0.05, 1.0), derived_rng(11, 4, 0, 0))
        _, large = huber_contaminate(y, HuberCorruption(0.30, 1.0), derived_rng(11, 4, 0, 0))
        assert np.all(large[small])  # every small-rho outlier is a large-rho outlier

    def test_rho_validation(self):
        with pytest.raises(ValueError):
            HuberCorruption(1.5, 1.0)


class TestBiasVarianceSweep:
    def test_single_trial_has_zero_variance(self):
        rows = bias_variance_sweep(_small_sweep(trials=1), TeacherConfig(d=8))
        assert all(r.variance == 0.0 for r in rows)
        assert all(r.mse_se == 0.0 for r in rows)

    def test_decomposition_identity(self):
        rows = bias_variance_sweep(_small_sweep(trials=10), TeacherConfig(d=8))
        for r in rows:
            # population-variance form makes the identity exact up to float error
            assert abs(r.mse - r.bias2 - r.variance) <= 1e-10 * max(1.0, r.mse)
            assert abs(r.mse - r.bias2 - r.variance) <= 3 * max(r.mse_se, 1e-12)

    def test_seed_determinism(self):
        a = bias_variance_sweep(_small_sweep(), TeacherConfig(d=8))
        b = bias_variance_sweep(_small_sweep(), TeacherConfig(d=8))
        assert a == b

    def test_parallel_equals_serial(self):
        a = bias_variance_sweep(_small_sweep(), TeacherConfig(d=8), threads=1)
        b = bias_variance_sweep(_small_sweep(), TeacherConfig(d=8), threads=4)
        assert a == b

    def test_constant_teacher_is_learned_when_overparameterized(self):
        # representable target + many features + tiny penalty -> near-zero error
        sweep = SweepConfig(d=32, psi2=3.0, psi1_grid=(1.0, 4.0, 8.0), lam=1e-6,
                            phi=1.0, trials=8, test_points=50, master_seed=3)
        teacher = TeacherConfig(d=32, kind="linear", beta0=1.0, noise_sd=0.0)
        rows = bias_variance_sweep(sweep, teacher)
        assert rows[-1].psi1 == 8.0
        assert rows[-1].mse <= 1e-2

    def test_teacher_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bias_variance_sweep(_small_sweep(), TeacherConfig(d=4))

    def test_row_fields(self):
        rows = bias_variance_sweep(_small_sweep(), TeacherConfig(d=8))
        assert [r.psi1 for r in rows] == [0.5, 1.0, 2.0, 3.0]
        assert [r.N for r in rows] == [4, 8, 16, 24]
        assert all(r.failed_trials == 0 for r in rows)
        assert all(np.isfinite(r.pred_variance) for r in rows)


class TestEnvelopeCurves:
    BASE = [(0.5, 1.0), (1.0, 5.0), (2.0, 2.0)]

    def test_zero_contamination_lower_envelope_is_base(self):
        rows = contamination_envelope_curves(self.BASE, eta_levels=[0.0])
        assert [r.lower_envelope for r in rows] == [r.base_variance for r in rows]

    def test_lower_envelope_arithmetic(self):
        rows = contamination_envelope_curves(self.BASE, eta_levels=[0.2])
        at_peak = [r for r in rows if r.psi1 == 1.0][0]
        assert at_peak.lower_envelope == pytest.approx(0.8 * 5.0, abs=1e-12)

    def test_argmax_flag_shared_across_levels(self):
        rows = contamination_envelope_curves(self.BASE, eta_levels=[0.05, 0.1, 0.2])
        for eta in (0.05, 0.1, 0.2):
            sub = [r for r in rows if r.eta == eta]
            flagged = [r.psi1 for r in sub if r.argmax_flag]
            assert flagged == [1.0]

    def test_envelope_argmax_matches_base_argmax_exactly(self):
        rng = np.random.default_rng(17)
        grid = np.linspace(0.25, 8, 13)
        values = rng.uniform(0.1, 10, size=13)
        curve = list(zip(grid, values))
        base_idx = peak_report(curve).argmax_index
        for eta in (0.05, 0.1, 0.2):
            rows = [r for r in contamination_envelope_curves(curve, [eta])]
            lower_idx = peak_report([(r.psi1, r.lower_envelope) for r in rows]).argmax_index
            upper_idx = peak_report([(r.psi1, r.upper_envelope) for r in rows]).argmax_index
            assert lower_idx == base_idx
            assert upper_idx == base_idx

    def test_zero_variance_points_degrade_gracefully(self):
        rows = contamination_envelope_curves([(0.5, 0.0), (1.0, 0.0), (2.0, 0.0)], [0.1])
        assert all(r.lower_envelope == 0.0 and r.upper_envelope == 0.0 for r in rows)

    def test_empty_curve_rejected(self):
        with pytest.raises(ValueError):
            contamination_envelope_curves([], [0.1])


class TestPeakReport:
    def test_increasing_curve_peaks_at_the_end(self):
        r = peak_report([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)])
        assert r.argmax_psi1 == 3.0 and r.argmax_index == 2

    def test_interior_maximum(self):
        r = peak_report([(1.0, 1.0), (2.0, 9.0), (3.0, 3.0)])
        assert r.argmax_psi1 == 2.0 and r.max_value == 9.0

    def test_ties_take_smallest_ratio(self):
        r = peak_report([(1.0, 5.0), (2.0, 5.0), (3.0, 1.0)])
        assert r.argmax_psi1 == 1.0

    def test_affine_transform_preserves_argmax(self):
        curve = [(1.0, 2.0), (2.0, 7.0), (3.0, 4.0), (4.0, 6.5)]
        base = peak_report(curve)
        scaled = peak_report([(p, 3.2 * v + 11.0) for p, v in curve])
        assert scaled.argmax_index == base.argmax_index

    def test_short_curve_rejected(self):
        with pytest.raises(ValueError):
            peak_report([(1.0, 1.0), (2.0, 2.0)])


class TestMisspecificationSweep:
    def test_uncorrupted_level_reproduces_clean_sweep_exactly(self):
        sweep = _small_sweep()
        clean = {r.psi1: r.mse for r in bias_variance_sweep(sweep, TeacherConfig(d=8))}
        rows = misspecification_sweep(sweep, TeacherConfig(d=8), corr_amplitude=5.0)
        for r in rows:
            if r.rho == 0.0:
                assert r.mse == clean[r.psi1]  # bit-identical, same streams

    def test_rows_sorted_by_ratio_then_rho(self):
        rows = misspecification_sweep(_small_sweep(), TeacherConfig(d=8), corr_amplitude=5.0)
        keys = [(r.psi1, r.rho) for r in rows]
        assert keys == sorted(keys)

    def test_each_rho_level_has_one_peak_flag(self):
        rows = misspecification_sweep(_small_sweep(), TeacherConfig(d=8), corr_amplitude=5.0)
        for rho in (0.0, 0.2):
            assert sum(r.peak_flag for r in rows if r.rho == rho) == 1

    def test_parallel_equals_serial(self):
        a = misspecification_sweep(_small_sweep(), TeacherConfig(d=8), 5.0, threads=1)
        b = misspecification_sweep(_small_sweep(), TeacherConfig(d=8), 5.0, threads=3)
        assert a == b

    def test_corruption_only_touches_training_labels(self, monkeypatch):
        seen = []
        original = exp.huber_contaminate

        def recorder(y, corr, rng):
            seen.append(y.size)
            return original(y, corr, rng)

        monkeypatch.setattr(exp, "huber_contaminate", recorder)
        sweep = _small_sweep()
        misspecification_sweep(sweep, TeacherConfig(d=8), corr_amplitude=5.0)
        assert seen and all(size == sweep.n for size in seen)  # never the test set


class TestSweepConfig:
    def test_derived_counts(self):
        sweep = _small_sweep()
        assert sweep.n == 16
        assert sweep.n_features_at(0.5) == 4
        assert sweep.n_features_at(3.0) == 24

    @pytest.mark.parametrize("bad", [
        dict(psi1_grid=()),
        dict(psi1_grid=(2.0, 1.0)),
        dict(psi1_grid=(0.0, 1.0)),
        dict(trials=0),
        dict(test_points=0),
        dict(lam=-1.0),
        dict(phi=0.0),
        dict(eta_levels=(1.5,)),
        dict(rho_levels=(-0.2,)),
    ])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            _small_sweep(**bad)
