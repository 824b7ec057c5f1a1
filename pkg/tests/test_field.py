"""Field tests: encoding closed forms, mixture moments against Monte-Carlo,
NLL against direct summation, and gradient checks through the NLL."""

import numpy as np
import pytest

from raysac.diffcore import Tensor, gradient_check
from raysac.field import (
    FieldConfig, GmmColor, RadianceField,
    gmm_moments, gmm_nll, gmm_nll_tape, positional_encode, query_field,
)


class TestPositionalEncode:
    def test_zero_input(self):
        out = positional_encode(np.zeros(3), 4)
        assert out.shape == (3 + 6 * 4,)
        np.testing.assert_array_equal(out[:3], 0.0)
        sin_cos = out[3:].reshape(4, 2, 3)
        np.testing.assert_allclose(sin_cos[:, 0], 0.0, atol=1e-7)
        np.testing.assert_allclose(sin_cos[:, 1], 1.0, atol=1e-7)

    def test_zero_levels_identity(self):
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_allclose(positional_encode(x, 0), x, rtol=1e-6)

    def test_half_closed_form(self):
        out = positional_encode(np.array([0.5, 0.0, 0.0]), 1)
        # layout: x(3), sin(pi x)(3), cos(pi x)(3)
        np.testing.assert_allclose(out[3], 1.0, atol=1e-6)   # sin(pi/2)
        np.testing.assert_allclose(out[6], 0.0, atol=1e-6)   # cos(pi/2)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-2, 2, (5, 3))
        batch = positional_encode(xs, 6)
        for i in range(5):
            np.testing.assert_array_equal(batch[i], positional_encode(xs[i], 6))


@pytest.fixture(scope="module")
def small_field():
    return RadianceField(FieldConfig(), np.random.default_rng(11))


class TestFieldForward:
    def test_sigma_nonnegative_and_finite(self, small_field):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = rng.uniform(-2, 2, 3)
            d = rng.standard_normal(3)
            d /= np.linalg.norm(d)
            out = query_field(small_field, x, d)
            assert np.isfinite(out.sigma) and out.sigma >= 0

    def test_pi_simplex(self, small_field):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (64, 3))
        d = np.array([0.0, 0.0, 1.0], dtype=np.float32)
        _, pi, _, var = small_field.query_np(x, d)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(pi >= 0) and np.all(var > 0)

    def test_deterministic(self, small_field):
        x = np.array([0.1, 0.2, 0.3])
        d = np.array([0.0, 1.0, 0.0])
        a = query_field(small_field, x, d)
        b = query_field(small_field, x, d)
        assert a.sigma == b.sigma
        np.testing.assert_array_equal(a.color.mu, b.color.mu)

    def test_direction_norm_enforced(self, small_field):
        with pytest.raises(ValueError):
            query_field(small_field, np.zeros(3), np.array([1.0, 1.0, 0.0]))

    def test_tape_matches_numpy_bitwise(self, small_field):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (17, 3)).astype(np.float32)
        d = rng.standard_normal((17, 3)).astype(np.float32)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        sigma_n, pi_n, mu_n, var_n = small_field.query_np(x, d)
        x_enc = Tensor(positional_encode(x, small_field.config.pos_enc_levels))
        d_enc = Tensor(positional_encode(d, small_field.config.dir_enc_levels))
        sigma_t, pi_t, mu_t, var_t = small_field.forward_tape(x_enc, d_enc)
        assert sigma_t.data.tobytes() == sigma_n.tobytes()
        assert pi_t.data.tobytes() == pi_n.tobytes()
        assert mu_t.data.tobytes() == mu_n.tobytes()
        assert var_t.data.tobytes() == var_n.tobytes()


class TestGmmMoments:
    def test_single_component(self):
        g = GmmColor(np.array([1.0]), np.array([[0.3, 0.5, 0.7]]),
                     np.array([[0.01, 0.02, 0.03]]))
        e, total, alea, epi = gmm_moments(g)
        np.testing.assert_allclose(e, [0.3, 0.5, 0.7])
        np.testing.assert_allclose(total, [0.01, 0.02, 0.03])
        np.testing.assert_allclose(epi, 0.0, atol=1e-12)

    def test_two_point_mixture(self):
        g = GmmColor(np.array([0.5, 0.5]),
                     np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
                     np.zeros((2, 3)))
        e, total, alea, epi = gmm_moments(g)
        np.testing.assert_allclose(e, 0.5)
        np.testing.assert_allclose(epi, 0.25)
        np.testing.assert_allclose(alea, 0.0)
        np.testing.assert_allclose(total, 0.25)

    def test_total_is_sum_of_parts(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            K = rng.integers(1, 5)
            pi = rng.dirichlet(np.ones(K))
            g = GmmColor(pi, rng.uniform(0, 1, (K, 3)), rng.uniform(1e-4, 0.1, (K, 3)))
            _, total, alea, epi = gmm_moments(g)
            np.testing.assert_allclose(total, alea + epi, rtol=1e-12)

    def test_monte_carlo_variance(self):
        # mixture variance vs 10^6 draws, within 1%
        rng = np.random.default_rng(6)
        pi = np.array([0.2, 0.5, 0.3])
        mu = rng.uniform(0.1, 0.9, (3, 3))
        var = rng.uniform(0.005, 0.05, (3, 3))
        g = GmmColor(pi, mu, var)
        _, total, _, _ = gmm_moments(g)
        n = 1_000_000
        comp = rng.choice(3, size=n, p=pi)
        draws = mu[comp] + rng.standard_normal((n, 3)) * np.sqrt(var[comp])
        emp = draws.var(axis=0)
        np.testing.assert_allclose(total, emp, rtol=0.01)


class TestGmmNll:
    def test_unit_height_gaussian_zero_nll(self):
        v = 1.0 / (2 * np.pi)
        g = GmmColor(np.array([1.0]), np.array([[0.4, 0.4, 0.4]]),
                     np.full((1, 3), v))
        assert abs(gmm_nll(g, np.array([0.4, 0.4, 0.4]))) < 1e-10

    def test_moving_away_increases_nll(self):
        g = GmmColor(np.array([0.6, 0.4]),
                     np.array([[0.2, 0.2, 0.2], [0.8, 0.8, 0.8]]),
                     np.full((2, 3), 0.01))
        center = np.array([0.5, 0.5, 0.5])
        vals = [gmm_nll(g, center + t * np.ones(3)) for t in [0.0, 0.6, 1.2, 2.4]]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_direct_summation_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            K = rng.integers(1, 4)
            g = GmmColor(rng.dirichlet(np.ones(K)),
                         rng.uniform(0, 1, (K, 3)),
                         rng.uniform(0.01, 0.2, (K, 3)))
            c = rng.uniform(0, 1, 3)
            dens = sum(g.pi[k] * np.prod(np.exp(-0.5 * (c - g.mu[k]) ** 2 / g.var[k])
                                         / np.sqrt(2 * np.pi * g.var[k]))
                       for k in range(K))
            np.testing.assert_allclose(gmm_nll(g, c), -np.log(dens), rtol=1e-5, atol=1e-5)

    def test_tape_matches_numpy_value(self):
        rng = np.random.default_rng(8)
        B, K = 6, 3
        pi = rng.dirichlet(np.ones(K), B).astype(np.float32)
        mu = rng.uniform(0, 1, (B, K, 3)).astype(np.float32)
        var = rng.uniform(0.01, 0.2, (B, K, 3)).astype(np.float32)
        c = rng.uniform(0, 1, (B, 3)).astype(np.float32)
        got = gmm_nll_tape(Tensor(pi), Tensor(mu), Tensor(var), c).item()
        want = np.mean([gmm_nll(GmmColor(pi[i], mu[i], var[i]), c[i]) for i in range(B)])
        np.testing.assert_allclose(got, want, rtol=1e-5)

    def test_nll_gradient_check(self):
        rng = np.random.default_rng(9)
        B, K = 4, 3
        # parametrize through raw values so the simplex/positivity constraints
        # are produced by the graph itself
        logits = Tensor(rng.uniform(-1, 1, (B, K)), requires_grad=True)
        mu_raw = Tensor(rng.uniform(-1, 1, (B, K, 3)), requires_grad=True)
        var_raw = Tensor(rng.uniform(-1, 1, (B, K, 3)), requires_grad=True)
        c = rng.uniform(0, 1, (B, 3)).astype(np.float32)

        def f():
            pi = logits.softmax()
            mu = mu_raw.sigmoid()
            var = var_raw.softplus() + 1e-4
            return gmm_nll_tape(pi, mu, var, c)

        gradient_check(f, [("logits", logits), ("mu_raw", mu_raw), ("var_raw", var_raw)],
                       rng=rng)
