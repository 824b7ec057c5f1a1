"""Renderer tests: quadrature closed forms, partition of unity, metric spot
values, SSIM against a brute-force reference, and differentiability."""

import numpy as np
import pytest

from raysac.diffcore import Tensor, gradient_check
from raysac.render import (
    RenderResult, composite, composite_batch, composite_tape,
    deltas_from_depths, effective_rate, psnr, reference_render, ssim,
)
from raysac.scenes import Ray, SceneOracle


def slab_closed_form(sigma0, a, b, color):
    return (1.0 - np.exp(-sigma0 * (b - a))) * np.asarray(color)


class TestComposite:
    def test_zero_density(self):
        depths = np.linspace(0.1, 0.9, 8)
        res = composite(depths, np.zeros(8), np.full((8, 3), 0.5), t_f=1.0)
        np.testing.assert_array_equal(res.color, 0.0)
        np.testing.assert_array_equal(res.weights, 0.0)
        assert res.residual_transmittance == 1.0

    def test_opaque_single_sample(self):
        res = composite(np.array([0.2]), np.array([1e8]),
                        np.array([[0.3, 0.6, 0.9]]), t_f=1.0)
        np.testing.assert_allclose(res.weights, [1.0], atol=1e-12)
        np.testing.assert_allclose(res.color, [0.3, 0.6, 0.9], atol=1e-9)

    def test_half_alpha_closed_form(self):
        # sigma=1, delta=ln 2 -> alpha=1/2 each; w=(1/2, 1/4), T_3=1/4
        d = np.log(2.0)
        depths = np.array([0.0, d])
        res = composite(depths, np.ones(2), np.ones((2, 3)), t_f=2 * d)
        np.testing.assert_allclose(res.alphas, 0.5, rtol=1e-12)
        np.testing.assert_allclose(res.weights, [0.5, 0.25], rtol=1e-12)
        np.testing.assert_allclose(res.residual_transmittance, 0.25, rtol=1e-12)

    def test_non_ascending_raises(self):
        with pytest.raises(ValueError):
            composite(np.array([0.5, 0.4]), np.ones(2), np.ones((2, 3)), t_f=1.0)

    def test_partition_of_unity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(2, 64)
            depths = np.sort(rng.uniform(0, 2, n))
            depths += np.arange(n) * 1e-6  # ensure strict ascent
            sigmas = rng.uniform(0, 50, n)
            res = composite(depths, sigmas, rng.uniform(0, 1, (n, 3)), t_f=2.5)
            total = res.weights.sum() + res.residual_transmittance
            assert abs(total - 1.0) <= 1e-6

    def test_transmittance_monotone(self):
        rng = np.random.default_rng(1)
        depths = np.sort(rng.uniform(0, 1, 32))
        res = composite(depths, rng.uniform(0, 10, 32), rng.uniform(0, 1, (32, 3)), t_f=1.2)
        assert np.all(np.diff(res.transmittances) <= 1e-15)
        assert res.transmittances[0] == 1.0

    def test_last_delta_uses_t_far(self):
        d = deltas_from_depths(np.array([0.1, 0.4]), t_f=1.0)
        np.testing.assert_allclose(d, [0.3, 0.6])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        depths = np.sort(rng.uniform(0, 1, (4, 16)), axis=1)
        sigmas = rng.uniform(0, 5, (4, 16))
        colors = rng.uniform(0, 1, (4, 16, 3))
        b = composite_batch(depths, sigmas, colors, t_f=1.1)
        for i in range(4):
            res = composite(depths[i], sigmas[i], colors[i], t_f=1.1)
            np.testing.assert_allclose(b["color"][i], res.color, atol=1e-12)
            np.testing.assert_allclose(b["weights"][i], res.weights, atol=1e-14)

    def test_slab_quadrature_converges(self):
        # piecewise-constant density: O(1/n) from boundary bins, halving ~2.
        # slab edges sit at bin fractions 1/3 and 2/3 of the n=256 grid so the
        # entry/exit errors add with the same phase at every n in the sequence
        # (arbitrary offsets make the error sawtooth in n).
        sigma0 = 1.5
        a = (65 + 1.0 / 3.0) / 128.0
        b = (190 + 2.0 / 3.0) / 128.0
        color = np.array([0.9, 0.7, 0.5])
        truth = slab_closed_form(sigma0, a, b, color)
        errs = {}
        for n in (256, 512, 1024):
            h = 2.0 / n
            t = (np.arange(n) + 0.5) * h
            inside = (t >= a) & (t <= b)
            res = composite(t, sigma0 * inside, np.tile(color, (n, 1)), t_f=2.0)
            errs[n] = np.abs(res.color - truth).max()
        assert errs[1024] <= 1e-3
        ratio = errs[512] / errs[1024]
        assert 1.5 <= ratio <= 2.5

    def test_tape_matches_numeric_and_differentiates(self):
        rng = np.random.default_rng(3)
        R, N = 3, 12
        depths = np.sort(rng.uniform(0, 1, (R, N)), axis=1)
        sig_raw = Tensor(rng.uniform(-1, 1, (R, N)), requires_grad=True)
        col_raw = Tensor(rng.uniform(-1, 1, (R, N, 3)), requires_grad=True)
        deltas = deltas_from_depths(depths, t_f=1.1).astype(np.float32)
        gt = rng.uniform(0, 1, (R, 3)).astype(np.float32)

        def render():
            sig = sig_raw.softplus()
            col = col_raw.sigmoid()
            c, _ = composite_tape(sig, col, deltas)
            return c

        c = render()
        b = composite_batch(depths, np.asarray(Tensor(sig_raw.data).softplus().data),
                            np.asarray(Tensor(col_raw.data).sigmoid().data), t_f=1.1)
        np.testing.assert_allclose(c.data, b["color"], atol=1e-5)

        def loss():
            diff = render() - Tensor(gt)
            return diff.square().sum()

        gradient_check(loss, [("sig", sig_raw), ("col", col_raw)], rng=rng)


class TestReferenceRender:
    def test_empty_scene_background(self):
        oracle = SceneOracle([], bounds=(0.0, 1.0), background=(0.1, 0.2, 0.3))
        ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 1.0, 0.5, 0.5)
        np.testing.assert_allclose(reference_render(oracle, ray, 512), [0.1, 0.2, 0.3])

    def test_slab_scene_closed_form(self):
        oracle = SceneOracle([{"kind": "slab", "axis": 2, "range": [0.5, 1.5],
                               "sigma": 0.8, "color": [0.9, 0.5, 0.2]}],
                             bounds=(0.0, 2.0))
        ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 2.0, 0.5, 0.5)
        got = reference_render(oracle, ray, 1024)
        want = slab_closed_form(0.8, 0.5, 1.5, [0.9, 0.5, 0.2])
        np.testing.assert_allclose(got, want, atol=1e-3)

    def test_n_dense_minimum(self):
        oracle = SceneOracle([], bounds=(0.0, 1.0))
        ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 1.0, 0.5, 0.5)
        with pytest.raises(ValueError):
            reference_render(oracle, ray, 128)


class TestMetrics:
    def test_psnr_identical_caps(self):
        img = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        assert psnr(img, img) == 100.0

    def test_psnr_closed_forms(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)       # MSE = 0.01
        np.testing.assert_allclose(psnr(a, b), 20.0, rtol=1e-12)
        c = np.full((10, 10, 3), np.sqrt(0.001))
        np.testing.assert_allclose(psnr(a, c), 30.0, rtol=1e-10)

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))

    def test_ssim_identical(self):
        img = np.random.default_rng(1).uniform(0, 1, (16, 16, 3))
        np.testing.assert_allclose(ssim(img, img), 1.0, atol=1e-12)

    def test_ssim_checkerboard_negative(self):
        iy, ix = np.mgrid[0:12, 0:12]
        a = ((iy + ix) % 2).astype(np.float64)
        b = 1.0 - a
        score = ssim(a[..., None].repeat(3, 2), b[..., None].repeat(3, 2))
        assert score < -0.5
        # brute-force reference over the valid windows
        ref = _ssim_reference(a, b)
        np.testing.assert_allclose(score, ref, rtol=1e-10)

    def test_ssim_constant_images_luminance_only(self):
        m1, m2 = 0.3, 0.7
        a = np.full((12, 12, 3), m1)
        b = np.full((12, 12, 3), m2)
        c1 = 0.01 ** 2
        want = (2 * m1 * m2 + c1) / (m1 ** 2 + m2 ** 2 + c1)
        np.testing.assert_allclose(ssim(a, b), want, rtol=1e-10)

    def test_ssim_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_effective_rate(self):
        assert effective_rate(np.zeros(16)) == 0.0
        assert effective_rate(np.array([0.5, 0.005, 0.02, 0.0]), 0.01) == 0.5
        with pytest.raises(ValueError):
            effective_rate(np.ones(4), 1.5)


def _ssim_reference(a, b, size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    H, W = a.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            mu_a = (win * pa).sum()
            mu_b = (win * pb).sum()
            va = (win * (pa - mu_a) ** 2).sum()
            vb = (win * (pb - mu_b) ** 2).sum()
            cov = (win * (pa - mu_a) * (pb - mu_b)).sum()
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
