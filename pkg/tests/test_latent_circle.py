import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from netrisk.errors import ValidationError
from netrisk.latent_circle import (
    LatentCircleState,
    distance_moments,
    pairwise_distance,
    propensity_monte_carlo,
    propensity_stats,
    simulate_angles,
    stationary_state,
    step_angles,
    substitutability_linear,
    substitutability_moments,
)


class TestDynamics:
    def test_validation(self):
        with pytest.raises(ValidationError):
            LatentCircleState(np.zeros(2), rho=1.0, sigma_theta=0.1)
        with pytest.raises(ValidationError):
            LatentCircleState(np.zeros(2), rho=0.5, sigma_theta=0.0)

    def test_step_is_seeded(self):
        s = LatentCircleState(np.ones(4), 0.5, 0.2)
        a, b = step_angles(s, 3), step_angles(s, 3)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.rho == 0.5 and a.space == "product"

    def test_iid_variance(self):
        s = LatentCircleState(np.zeros(1), 0.0, 0.3)
        path = simulate_angles(s, 100_000, seed=1)[1:, 0]
        assert path.var() == pytest.approx(0.09, rel=0.02)

    def test_lag_one_autocorrelation(self):
        s = stationary_state(1, 0.9, 0.3, seed=2)
        path = simulate_angles(s, 100_000, seed=3)[:, 0]
        assert np.corrcoef(path[:-1], path[1:])[0, 1] == pytest.approx(0.9, abs=0.02)


class TestDistance:
    def test_examples(self):
        assert pairwise_distance(np.array([1.0, 1.0]))[0, 1] == 0
        assert pairwise_distance(np.array([0.0, np.pi]))[0, 1] == pytest.approx(0.5)
        assert pairwise_distance(np.array([0.0, 3 * np.pi]), "wrapped")[0, 1] == pytest.approx(0.5)
        assert pairwise_distance(np.array([0.0, 3 * np.pi]))[0, 1] == pytest.approx(1.5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    def test_symmetric_zero_diagonal_range(self, angles):
        for mode in ("unwrapped", "wrapped"):
            D = pairwise_distance(np.array(angles), mode)
            np.testing.assert_array_equal(D, D.T)
            assert np.all(np.diag(D) == 0)
        assert D.max() <= 0.5 + 1e-15

    def test_moment_formula_and_scaling(self):
        m_raw = distance_moments(0.5, 0.5, scaled=False)
        assert m_raw.sigma_d2 == pytest.approx((2 - 4 / np.pi) * 0.25 / 0.75)
        m = distance_moments(0.5, 0.5)
        assert m.sigma_d2 == pytest.approx(m_raw.sigma_d2 / (2 * np.pi) ** 2)

    def test_moment_simulation(self):
        rng = np.random.default_rng(4)
        th = rng.standard_normal((100_000, 2)) * 0.5 / np.sqrt(1 - 0.25)
        gap = np.abs(th[:, 0] - th[:, 1])
        m = distance_moments(0.5, 0.5, scaled=False)
        assert gap.var() == pytest.approx(m.sigma_d2, rel=0.03)
        assert gap.mean() == pytest.approx(m.mean_abs_gap, rel=0.01)


class TestSubstitutabilityMoments:
    def test_no_pairs(self):
        W = np.zeros((3, 3))
        W[0, 1] = W[1, 2] = 0.4
        mu, cov = substitutability_moments(W, 0.1)
        np.testing.assert_array_equal(mu, 0)
        np.testing.assert_array_equal(cov, 0)

    def test_single_pair(self):
        W = np.zeros((3, 3))
        W[0, 1] = W[0, 2] = 0.5
        sd2 = 0.2
        mu, cov = substitutability_moments(W, sd2)
        assert mu[0] == pytest.approx(-0.25 * np.sqrt(sd2) * np.sqrt(8 / np.pi))
        assert cov[0, 0] == pytest.approx(0.25 * sd2)

    def test_shared_partners_perfectly_correlated(self):
        W = np.zeros((4, 4))
        W[0, 2] = W[0, 3] = W[1, 2] = W[1, 3] = 0.3
        _, cov = substitutability_moments(W, 0.1)
        assert cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]) == pytest.approx(1.0)

    def test_disjoint_partners_uncorrelated(self):
        W = np.zeros((6, 6))
        W[0, 2] = W[0, 3] = W[1, 4] = W[1, 5] = 0.3
        _, cov = substitutability_moments(W, 0.1)
        assert cov[0, 1] == 0

    def test_disjoint_distances_simulated(self):
        rng = np.random.default_rng(5)
        th = rng.standard_normal((100_000, 4))
        d01 = np.abs(th[:, 0] - th[:, 1])
        d23 = np.abs(th[:, 2] - th[:, 3])
        assert abs(np.corrcoef(d01, d23)[0, 1]) < 0.05

    def test_linear_score(self):
        W = np.zeros((3, 3))
        W[0, 1] = W[0, 2] = 0.5
        D = np.array([[0, 0, 0], [0, 0, 1.0], [0, 1.0, 0]])
        assert substitutability_linear(W, D)[0] == pytest.approx(0.5)


class TestPropensity:
    def test_demeaned_mu(self):
        st_ = propensity_stats(np.full(3, 2.0), np.eye(3), np.ones(3))
        np.testing.assert_allclose(st_.median, 0.5)

    def test_zero_k(self):
        st_ = propensity_stats(np.array([3.0, -1.0]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(st_.median, 0.5)

    def test_two_unit_example(self):
        st_ = propensity_stats(np.array([2.0, 0.0]), np.eye(2), np.ones(2))
        np.testing.assert_allclose(st_.logodds_mean, [1.0, -1.0])
        np.testing.assert_allclose(st_.median, [expit(1), expit(-1)])
        assert st_.median[0] == pytest.approx(0.731, abs=5e-4)

    def test_monte_carlo_median_matches(self):
        mu = np.array([1.0, 0.0, -0.5])
        cov = 0.3 * np.eye(3)
        mc = propensity_monte_carlo(mu, cov, np.ones(3), 50_000, seed=1)
        assert mc["monte_carlo"]
        # symmetric log-odds: mean of p sits on the same side of 1/2 as the median
        med = propensity_stats(mu, cov, np.ones(3)).median
        assert np.all(np.sign(mc["mean"] - 0.5) == np.sign(med - 0.5))
