from __future__ import annotations

import numpy as np
import pytest

import oracles
from ispnp.priors import (
    GmmPrior,
    SDESchedule,
    beta,
    beta_inv,
    gaussian_score,
    gmm_log_density,
    gmm_responsibilities,
    gmm_score,
    make_gaussian_score,
)


class TestSchedule:
    def test_beta_zero_and_frozen_ceiling(self):
        s = SDESchedule(sigma_d=20.0)
        assert beta(s, 0.0) == 0.0
        # sqrt((20^2 - 1) / (2 ln 20)) = sqrt(399 / 5.9914...)
        assert beta(s, 1.0) == pytest.approx(8.160559787092987, rel=1e-12)

    def test_monotone_increasing(self):
        s = SDESchedule(sigma_d=20.0)
        ts = np.linspace(0.0, 1.0, 200)
        bs = beta(s, ts)
        assert np.all(np.diff(bs) > 0)

    @pytest.mark.parametrize("t", [0.0, 0.1, 0.37, 0.9, 1.0])
    def test_inverse_identity(self, t):
        s = SDESchedule(sigma_d=20.0)
        assert beta_inv(s, float(beta(s, t))) == pytest.approx(t, abs=1e-10)

    def test_beta_inv_over_ceiling(self):
        s = SDESchedule(sigma_d=20.0)
        with pytest.raises(ValueError):
            beta_inv(s, 9.0)
        with pytest.warns(UserWarning):
            assert beta_inv(s, 9.0, clamp=True) == 1.0

    def test_domain_validation(self):
        s = SDESchedule()
        with pytest.raises(ValueError):
            beta(s, 1.5)
        with pytest.raises(ValueError):
            beta_inv(s, -0.1)
        with pytest.raises(ValueError):
            SDESchedule(sigma_d=1.0)
        with pytest.raises(ValueError):
            SDESchedule(eps_t=0.0)

    def test_g_and_f(self):
        s = SDESchedule(sigma_d=20.0)
        assert s.g(0.0) == 1.0
        assert s.g(1.0) == 20.0
        assert s.f(0.5) == 0.0 and s.alpha(0.5) == 1.0


class TestGaussianScore:
    def test_standard_gaussian_at_t0(self):
        s = SDESchedule()
        z = np.array([0.3, -1.2, 4.0])
        np.testing.assert_allclose(gaussian_score(0.0, 1.0, s, z, 0.0), -z)

    def test_closed_form_denominator(self):
        # var 1 and beta^2 = 3 gives (mu - z)/4
        s = SDESchedule(sigma_d=20.0)
        t = beta_inv(s, np.sqrt(3.0))
        mu, z = np.array([2.0]), np.array([0.5])
        got = gaussian_score(mu, 1.0, s, z, t)
        assert got[0] == pytest.approx((2.0 - 0.5) / 4.0, rel=1e-10)

    def test_zero_at_mean(self):
        s = SDESchedule()
        mu = np.array([1.0, -2.0])
        for t in (0.0, 0.3, 1.0):
            np.testing.assert_allclose(gaussian_score(mu, 0.7, s, mu, t), 0.0)

    def test_var_must_be_positive(self):
        with pytest.raises(ValueError):
            gaussian_score(0.0, 0.0, SDESchedule(), np.zeros(2), 0.5)


class TestGmmPrior:
    def test_validation(self):
        with pytest.raises(ValueError):
            GmmPrior(np.array([0.5, 0.4]), np.zeros((2, 1)), np.ones((2, 1)))
        with pytest.raises(ValueError):
            GmmPrior(np.array([1.0]), np.zeros((1, 2)), np.array([[1.0, -1.0]]))
        with pytest.raises(ValueError):
            GmmPrior(np.array([0.5, 0.5]), np.zeros((2, 2)), np.ones((3, 2)))

    def test_json_roundtrip(self, tmp_path):
        p = GmmPrior(np.array([0.3, 0.7]), np.array([[1.0, 2.0], [-1.0, 0.5]]),
                     np.array([[0.2, 0.4], [0.1, 0.3]]))
        f = tmp_path / "prior.json"
        p.save(f)
        back = GmmPrior.load(f)
        np.testing.assert_array_equal(back.weights, p.weights)
        np.testing.assert_array_equal(back.means, p.means)
        np.testing.assert_array_equal(back.variances, p.variances)


class TestGmmScore:
    def test_single_component_equals_gaussian(self):
        s = SDESchedule()
        prior = GmmPrior(np.array([1.0]), np.array([[0.7, -0.2]]),
                         np.array([[0.5, 0.5]]))
        z = np.array([0.1, 0.9])
        got = gmm_score(prior, s, z, 0.4)
        want = gaussian_score(prior.means[0], 0.5, s, z, 0.4)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_symmetric_components_cancel_at_origin(self):
        s = SDESchedule()
        prior = GmmPrior(np.array([0.5, 0.5]), np.array([[2.0], [-2.0]]),
                         np.array([[0.3], [0.3]]))
        got = gmm_score(prior, s, np.array([0.0]), 0.5)
        np.testing.assert_allclose(got, 0.0, atol=1e-14)

    def test_matches_log_density_finite_differences(self):
        s = SDESchedule(sigma_d=20.0)
        prior = GmmPrior(
            np.array([0.25, 0.45, 0.30]),
            np.array([[1.0, -0.5], [-1.2, 0.8], [0.3, 2.0]]),
            np.array([[0.3, 0.6], [0.2, 0.2], [0.8, 0.4]]),
        )
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = 3.0 * rng.standard_normal(2)
            t = float(rng.uniform(0.001, 1.0))
            score = gmm_score(prior, s, z, t)
            fd = oracles.fd_gradient(
                lambda x: float(gmm_log_density(prior, s, x, t)), z.copy(), h=1e-6
            )
            np.testing.assert_allclose(score, fd, rtol=1e-5, atol=1e-6)

    def test_responsibilities_sum_to_one(self):
        s = SDESchedule()
        prior = GmmPrior(np.array([0.2, 0.8]), np.array([[0.0, 0.0], [5.0, -5.0]]),
                         np.array([[1.0, 1.0], [0.1, 0.1]]))
        rng = np.random.default_rng(1)
        z = 20.0 * rng.standard_normal((40, 2))  # includes far-tail points
        for t in (0.0, 0.2, 1.0):
            gam = gmm_responsibilities(prior, s, z, t)
            np.testing.assert_allclose(gam.sum(axis=-1), 1.0, atol=1e-12)
            assert np.all(gam >= 0)

    def test_batched_shapes(self):
        s = SDESchedule()
        prior = GmmPrior(np.array([0.5, 0.5]), np.array([[0.0], [1.0]]),
                         np.array([[0.2], [0.2]]))
        z = np.random.default_rng(2).standard_normal((4, 3, 1))
        out = gmm_score(prior, s, z, 0.3)
        assert out.shape == z.shape
        with pytest.raises(ValueError):
            gmm_score(prior, s, np.zeros((4, 2)), 0.3)

    def test_gradient_field_is_curl_free(self):
        # analytic scores are gradients of a potential; mixed partials agree
        s = SDESchedule()
        prior = GmmPrior(np.array([0.6, 0.4]), np.array([[1.0, 0.0], [-0.5, 1.5]]),
                         np.array([[0.4, 0.7], [0.3, 0.2]]))
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(10):
            z = 2.0 * rng.standard_normal(2)
            t = float(rng.uniform(0.0, 1.0))

            def s0(x, y):
                return gmm_score(prior, s, np.array([x, y]), t)

            d_s0_dy = (s0(z[0], z[1] + h)[0] - s0(z[0], z[1] - h)[0]) / (2 * h)
            d_s1_dx = (s0(z[0] + h, z[1])[1] - s0(z[0] - h, z[1])[1]) / (2 * h)
            assert d_s0_dy == pytest.approx(d_s1_dx, rel=1e-4, abs=1e-6)


class TestScoreFactories:
    def test_gaussian_factory_binds_arguments(self):
        s = SDESchedule()
        fn = make_gaussian_score(s, 1.0, 2.0)
        z = np.array([0.0, 3.0])
        np.testing.assert_allclose(fn(z, 0.2), gaussian_score(1.0, 2.0, s, z, 0.2))
