"""Mixture-contamination set functions, envelope bounds, and the discrete oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from contamrf import (
    ContaminatingDensity,
    ContaminationBudget,
    PredictiveGaussian,
    SpikeDensity,
    discrete_envelope_oracle,
    envelope_density,
    envelope_mass,
    gaussian_pdf,
    lower_set_prob,
    predictive_envelopes,
    upper_set_prob,
)

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestSetProbabilities:
    def test_lower_formula(self):
        assert lower_set_prob(0.5, 0.1) == pytest.approx(0.45, abs=1e-15)

    def test_lower_full_space_branch(self):
        assert lower_set_prob(0.2, 0.3, is_full_space=True) == 1.0

    def test_upper_formula(self):
        assert upper_set_prob(0.5, 0.1) == pytest.approx(0.55, abs=1e-15)

    def test_upper_empty_branch(self):
        assert upper_set_prob(0.9, 0.2, is_empty=True) == 0.0

    def test_zero_contamination_is_identity(self):
        assert lower_set_prob(0.7, 0.0) == 0.7
        assert upper_set_prob(0.7, 0.0) == 0.7

    def test_conjugacy_on_random_pairs(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            p, eps = rng.random(), rng.random()
            total = lower_set_prob(p, eps) + upper_set_prob(1.0 - p, eps)
            assert abs(total - 1.0) <= 1e-15

    @given(p=probs, eps=probs)
    @settings(deadline=None, max_examples=200)
    def test_conjugacy_property(self, p, eps):
        assert lower_set_prob(p, eps) + upper_set_prob(1.0 - p, eps) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("p,eps", [(-0.1, 0.5), (1.1, 0.5), (0.5, -0.01), (0.5, 2.0)])
    def test_out_of_range_rejected(self, p, eps):
        with pytest.raises(ValueError):
            lower_set_prob(p, eps)
        with pytest.raises(ValueError):
            upper_set_prob(p, eps)


class TestSpikeDensity:
    def test_normalization_by_quadrature(self):
        spike = SpikeDensity(center=2.0, half_width=0.25)
        mass, _ = quad(spike.pdf, 1.5, 2.5, points=[1.75, 2.25])
        assert mass == pytest.approx(1.0, abs=1e-12)

    def test_bounded_supremum(self):
        spike = SpikeDensity(center=0.0, half_width=1e-3)
        assert spike.sup == pytest.approx(500.0, abs=0)
        assert spike.pdf(0.0) == spike.sup

    def test_zero_outside_support(self):
        spike = SpikeDensity(center=1.0, half_width=0.1)
        assert spike.pdf(1.2) == 0.0
        assert spike.pdf(0.85) == 0.0

    def test_multidimensional_box(self):
        spike = SpikeDensity(center=np.array([0.0, 1.0]), half_width=0.5)
        assert spike.pdf(np.array([0.2, 1.2])) == pytest.approx(1.0, abs=0)
        assert spike.pdf(np.array([0.9, 1.0])) == 0.0

    def test_invalid_half_width(self):
        with pytest.raises(ValueError):
            SpikeDensity(center=0.0, half_width=0.0)

    @given(center=st.floats(-5, 5), half_width=st.floats(1e-4, 2.0))
    @settings(deadline=None, max_examples=50)
    def test_mass_is_one_for_any_window(self, center, half_width):
        spike = SpikeDensity(center=center, half_width=half_width)
        mass = quad(spike.pdf, center - half_width, center + half_width)[0]
        assert mass == pytest.approx(1.0, rel=1e-9)


class TestContaminatingDensity:
    def test_uniform_window(self):
        u = ContaminatingDensity.uniform(-3.0, 3.0)
        assert u.pdf(0.0) == pytest.approx(1.0 / 6.0, abs=1e-16)
        assert u.pdf(4.0) == 0.0
        assert u.support() == (-3.0, 3.0)

    def test_spike_kind(self):
        u = ContaminatingDensity.from_spike(SpikeDensity(center=1.0, half_width=0.2))
        assert u.pdf(1.0) == pytest.approx(2.5, abs=0)
        assert u.support() == (0.8, 1.2)

    def test_invalid_windows(self):
        with pytest.raises(ValueError):
            ContaminatingDensity.uniform(1.0, 1.0)
        with pytest.raises(ValueError):
            ContaminatingDensity(kind="banana")


class TestEventDensityBound:
    def test_zero_epsilon_is_identity(self):
        base = PredictiveGaussian(0.0, 1.0)
        env = envelope_density("lower", lambda y: gaussian_pdf(base, y), 0.0,
                               SpikeDensity(center=5.0, half_width=0.1))
        for y in (-2.0, 0.0, 0.3, 1.7):
            assert env(y) == gaussian_pdf(base, y)

    def test_lower_kind_mass_matches_quadrature_oracle(self):
        # spike placed outside the event [0, 1]: the event keeps only the
        # rescaled baseline mass
        base = PredictiveGaussian(0.0, 1.0)
        env = envelope_density("lower", lambda y: gaussian_pdf(base, y), 0.2,
                               SpikeDensity(center=5.0, half_width=0.1))
        mass = quad(env, 0.0, 1.0)[0]
        want = 0.8 * (norm.cdf(1.0) - norm.cdf(0.0))
        assert mass == pytest.approx(want, abs=1e-6)

    def test_upper_kind_mass_matches_quadrature_oracle(self):
        # spike inside the event adds its full weight
        base = PredictiveGaussian(0.0, 1.0)
        env = envelope_density("upper", lambda y: gaussian_pdf(base, y), 0.2,
                               SpikeDensity(center=0.5, half_width=0.1))
        mass = quad(env, 0.0, 1.0, points=[0.4, 0.6])[0]
        want = 0.8 * (norm.cdf(1.0) - norm.cdf(0.0)) + 0.2
        assert mass == pytest.approx(want, abs=1e-6)

    def test_records_requested_convention(self):
        spike = SpikeDensity(center=0.0, half_width=0.1)
        assert envelope_density("lower", lambda y: 0.0, 0.1, spike).kind == "lower"
        assert envelope_density("upper", lambda y: 0.0, 0.1, spike).kind == "upper"
        with pytest.raises(ValueError):
            envelope_density("middle", lambda y: 0.0, 0.1, spike)


class TestPredictiveEnvelopes:
    def _pair(self, eta, mean=0.0, var=1.0, window=(-3.0, 3.0)):
        base = PredictiveGaussian(mean, var)
        u = ContaminatingDensity.uniform(*window)
        return predictive_envelopes(base, ContaminationBudget(epsilon=0.0, eta=eta), u), base

    def test_uncontaminated_bounds_coincide_with_base(self):
        pair, base = self._pair(0.0)
        for y in np.linspace(-4, 4, 17):
            assert pair.lower_bound_at(y) == gaussian_pdf(base, y)
            assert pair.upper_bound_at(y) == gaussian_pdf(base, y)

    def test_frozen_lower_value(self):
        pair, _ = self._pair(0.2)
        assert pair.lower_bound_at(0.0) == pytest.approx(0.3191538243, abs=1e-9)

    def test_frozen_upper_value(self):
        pair, _ = self._pair(0.2)
        assert pair.upper_bound_at(0.0) == pytest.approx(0.3524871577, abs=1e-9)

    def test_full_contamination_warns(self):
        base = PredictiveGaussian(0.0, 1.0)
        u = ContaminatingDensity.uniform(-1.0, 1.0)
        with pytest.warns(UserWarning, match="identically zero"):
            predictive_envelopes(base, ContaminationBudget(0.0, 1.0), u)

    @given(y=st.floats(-30, 30), eta=st.floats(0.0, 0.99))
    @settings(deadline=None, max_examples=300)
    def test_pointwise_ordering(self, y, eta):
        pair, base = self._pair(eta)
        b = gaussian_pdf(base, y)
        assert pair.lower_bound_at(y) <= b
        assert pair.upper_bound_at(y) >= (1.0 - eta) * b

    def test_equality_only_without_contamination(self):
        for eta in (0.05, 0.1, 0.3, 0.9):
            pair, base = self._pair(eta)
            for y in (-1.0, 0.0, 2.0):
                assert pair.lower_bound_at(y) < gaussian_pdf(base, y)

    @pytest.mark.parametrize("eta", [0.0, 0.05, 0.3, 0.9])
    def test_mass_accounting(self, eta):
        pair, _ = self._pair(eta, mean=0.7, var=2.0, window=(-2.0, 6.0))
        lower, upper = envelope_mass(pair)
        assert lower == pytest.approx(1.0 - eta, abs=1e-6)
        assert upper == pytest.approx(1.0, abs=1e-6)

    def test_mass_accounting_disjoint_support(self):
        # contaminant support far from the Gaussian bulk still integrates fully
        pair, _ = self._pair(0.25, window=(40.0, 41.0))
        lower, upper = envelope_mass(pair)
        assert lower == pytest.approx(0.75, abs=1e-6)
        assert upper == pytest.approx(1.0, abs=1e-6)


def _normal_grid_masses(cells, lo=-5.0, hi=5.0):
    grid = np.linspace(lo, hi, cells + 1)
    masses = np.diff(norm.cdf(grid))
    masses /= masses.sum()
    return grid, masses


class TestDiscreteEnvelopeOracle:
    def test_no_contamination_is_the_base_mass(self):
        grid, masses = _normal_grid_masses(40)
        query = range(10, 20)
        lo, hi = discrete_envelope_oracle(grid, masses, 0.0, 0.0, query)
        want = masses[10:20].sum()
        assert lo == pytest.approx(want, abs=1e-15)
        assert hi == pytest.approx(want, abs=1e-15)

    def test_full_query_is_certain(self):
        grid, masses = _normal_grid_masses(25)
        lo, hi = discrete_envelope_oracle(grid, masses, 0.3, 0.4, range(25))
        assert lo == pytest.approx(1.0, abs=1e-12)
        assert hi == pytest.approx(1.0, abs=1e-12)

    def test_standard_normal_grid_against_bound_directions(self):
        grid, masses = _normal_grid_masses(50)
        # cells covering [-1, 1] on the 0.2-wide grid
        query = [k for k in range(50) if grid[k] >= -1.0 - 1e-12 and grid[k + 1] <= 1.0 + 1e-12]
        base_mass = masses[query].sum()
        eps, eta = 0.05, 0.1
        lo, hi = discrete_envelope_oracle(grid, masses, eps, eta, query)
        assert lo <= (1.0 - eta) * base_mass
        u_mass = len(query) / 50.0  # cell-uniform contaminant
        assert hi >= (1.0 - eta) * base_mass + eta * u_mass
        assert lo <= base_mass <= hi

    def test_containment_on_random_grids(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            K = int(rng.integers(5, 120))
            grid = np.sort(rng.uniform(-10, 10, K + 1))
            while np.any(np.diff(grid) <= 0):
                grid = np.sort(rng.uniform(-10, 10, K + 1))
            masses = rng.random(K)
            masses /= masses.sum()
            query = np.flatnonzero(rng.random(K) < 0.3)
            if query.size == 0:
                query = np.array([0])
            lo, hi = discrete_envelope_oracle(grid, masses, rng.uniform(0, 0.5),
                                              rng.uniform(0, 0.5), query)
            base_mass = masses[query].sum()
            assert lo <= base_mass + 1e-15
            assert hi >= base_mass - 1e-15

    def test_oversized_grid_refused(self):
        grid = np.linspace(0, 1, 202)
        masses = np.full(201, 1.0 / 201)
        masses /= masses.sum()
        with pytest.raises(ValueError, match="cap"):
            discrete_envelope_oracle(grid, masses, 0.1, 0.1, [0])

    def test_bad_masses_rejected(self):
        grid = np.linspace(0, 1, 5)
        with pytest.raises(ValueError):
            discrete_envelope_oracle(grid, [0.5, 0.5, 0.5, 0.5], 0.1, 0.1, [0])
        with pytest.raises(ValueError):
            discrete_envelope_oracle(grid, [0.25, 0.25, 0.25, 0.26], 0.1, 0.1, [9])

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            discrete_envelope_oracle([0.0, 0.5, 0.4, 1.0], [0.3, 0.3, 0.4], 0.1, 0.1, [0])


class TestContaminationBudget:
    def test_bounds_enforced(self):
        ContaminationBudget(0.0, 1.0)
        ContaminationBudget(1.0, 0.0)
        with pytest.raises(ValueError):
            ContaminationBudget(-0.01, 0.5)
        with pytest.raises(ValueError):
            ContaminationBudget(0.5, 1.01)
