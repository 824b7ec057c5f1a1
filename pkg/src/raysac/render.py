"""Discrete volume rendering and image-quality metrics.

The quadrature follows the standard discretization: alpha_i = 1 - exp(-sigma_i
delta_i), T_i = prod_{j<i} (1 - alpha_j), w_i = T_i alpha_i, and the ray color
is sum_i w_i E[c_i].  The transmittance product is computed as
exp(-cumsum_exclusive(sigma delta)), which is the same quantity written as a
sum of optical depths.  The last interval uses delta_N = t_f - t_N.

The numeric path (`composite`, `composite_batch`) runs in float64 so the
partition of unity holds to 1e-6 even at large N; `composite_tape` is the
float32 differentiable twin used in training losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor


@dataclass
class RenderResult:
    color: np.ndarray                  # (3,) in [0,1]
    ray_variance: np.ndarray           # (3,) composited total variance
    weights: np.ndarray                # (N,)
    residual_transmittance: float      # T_{N+1}
    alphas: np.ndarray = None          # (N,)
    transmittances: np.ndarray = None  # (N,) T_i before each sample
    deltas: np.ndarray = None          # (N,)


def deltas_from_depths(depths, t_f):
    """Interval widths: delta_i = t_{i+1} - t_i, with delta_N = t_f - t_N."""
    depths = np.asarray(depths, dtype=np.float64)
    d = np.empty_like(depths)
    d[..., :-1] = depths[..., 1:] - depths[..., :-1]
    d[..., -1] = t_f - depths[..., -1]
    return d


def composite_batch(depths, sigmas, colors, t_f, variances=None):
    """Vectorized quadrature over rays.

    depths, sigmas: (R, N); colors: (R, N, 3); optional variances (R, N, 3).
    Returns a dict of float64 arrays: color (R,3), weights, alphas, trans,
    deltas (R,N), resid (R,), and ray_variance (R,3) when variances given.
    """
    depths = np.asarray(depths, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64)
    if np.any(np.diff(depths, axis=-1) <= 0):
        raise ValueError("composite: depths must be strictly ascending")
    dl = deltas_from_depths(depths, t_f)
    od = sigmas * dl
    alpha = -np.expm1(-od)
    cum = np.cumsum(od, axis=-1)
    T = np.exp(-np.concatenate([np.zeros_like(cum[..., :1]), cum[..., :-1]], axis=-1))
    resid = np.exp(-cum[..., -1])
    w = T * alpha
    color = (w[..., None] * colors).sum(axis=-2)
    out = {"color": color, "weights": w, "alphas": alpha, "trans": T,
           "deltas": dl, "resid": resid}
    if variances is not None:
        v = np.asarray(variances, dtype=np.float64)
        out["ray_variance"] = ((w ** 2)[..., None] * v).sum(axis=-2)
    return out


def composite(depths, sigmas, colors, t_f, variances=None, background=None) -> RenderResult:
    """Single-ray quadrature; colors are GMM expected colors (N, 3)."""
    b = composite_batch(np.asarray(depths)[None], np.asarray(sigmas)[None],
                        np.asarray(colors)[None], t_f,
                        None if variances is None else np.asarray(variances)[None])
    c = b["color"][0]
    if background is not None:
        c = c + b["resid"][0] * np.asarray(background, dtype=np.float64)
    rv = b.get("ray_variance")
    return RenderResult(
        color=np.clip(c, 0.0, 1.0),
        ray_variance=np.zeros(3) if rv is None else rv[0],
        weights=b["weights"][0],
        residual_transmittance=float(b["resid"][0]),
        alphas=b["alphas"][0],
        transmittances=b["trans"][0],
        deltas=b["deltas"][0],
    )


def composite_tape(sigma_t: Tensor, colors_t: Tensor, deltas: np.ndarray):
    """Differentiable quadrature.  sigma_t (R,N), colors_t (R,N,3); deltas is
    a constant (R,N) float32 array.  Returns (color (R,3), weights (R,N))."""
    R, N = sigma_t.shape
    od = sigma_t * Tensor(np.asarray(deltas, dtype=np.float32))
    alpha = 1.0 - (-od).exp()
    T = (-od.cumsum(axis=1, exclusive=True)).exp()
    w = T * alpha
    color = (w.reshape(R, N, 1).broadcast_to((R, N, 3)) * colors_t).sum(axis=1)
    return color, w


def reference_render(oracle, ray, n_dense=1024):
    """Ground-truth pixel: dense uniform midpoint quadrature of the analytic
    scene along the ray.  Serves as the convergence oracle for composite."""
    if n_dense < 256:
        raise ValueError("reference_render: n_dense must be >= 256")
    o, d, t_n, t_f = ray.origin, ray.direction, ray.t_near, ray.t_far
    h = (t_f - t_n) / n_dense
    t = t_n + (np.arange(n_dense, dtype=np.float64) + 0.5) * h
    pts = o[None, :] + t[:, None] * d[None, :]
    sigma, color = oracle.sample(pts)
    od = sigma * h
    alpha = -np.expm1(-od)
    cum = np.cumsum(od)
    T = np.exp(-(cum - od))
    w = T * alpha
    c = (w[:, None] * color).sum(axis=0) + np.exp(-cum[-1]) * oracle.background
    return np.clip(c, 0.0, 1.0)


def reference_render_batch(oracle, origins, dirs, t_n, t_f, n_dense=1024, chunk=1024):
    """Vectorized reference_render over many rays sharing one bound pair.

    origins, dirs: (R, 3).  Returns (R, 3) float64 colors.
    """
    if n_dense < 256:
        raise ValueError("reference_render: n_dense must be >= 256")
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    R = origins.shape[0]
    h = (t_f - t_n) / n_dense
    t = t_n + (np.arange(n_dense, dtype=np.float64) + 0.5) * h
    out = np.empty((R, 3), dtype=np.float64)
    for lo in range(0, R, chunk):
        hi = min(lo + chunk, R)
        pts = origins[lo:hi, None, :] + t[None, :, None] * dirs[lo:hi, None, :]
        sigma, color = oracle.sample(pts.reshape(-1, 3))
        sigma = sigma.reshape(hi - lo, n_dense)
        color = color.reshape(hi - lo, n_dense, 3)
        od = sigma * h
        alpha = -np.expm1(-od)
        cum = np.cumsum(od, axis=1)
        T = np.exp(-(cum - od))
        w = T * alpha
        c = (w[:, :, None] * color).sum(axis=1)
        c += np.exp(-cum[:, -1])[:, None] * oracle.background[None, :]
        out[lo:hi] = c
    return np.clip(out, 0.0, 1.0)


def psnr(img_a, img_b) -> float:
    """-10 log10(MSE), MSE floored at 1e-10 so identical images cap at 100 dB."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = max(float(np.mean((a - b) ** 2)), 1e-10)
    return -10.0 * np.log10(mse)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(img_a, img_b) -> float:
    """Mean local SSIM on channel-mean grayscale, 11x11 Gaussian window
    (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: shape mismatch")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("ssim: image must be at least 11x11")
    win = _gaussian_window()
    pa = np.lib.stride_tricks.sliding_window_view(a, (11, 11))
    pb = np.lib.stride_tricks.sliding_window_view(b, (11, 11))
    mu_a = (pa * win).sum(axis=(-2, -1))
    mu_b = (pb * win).sum(axis=(-2, -1))
    var_a = (pa ** 2 * win).sum(axis=(-2, -1)) - mu_a ** 2
    var_b = (pb ** 2 * win).sum(axis=(-2, -1)) - mu_b ** 2
    cov = (pa * pb * win).sum(axis=(-2, -1)) - mu_a * mu_b
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


def effective_rate(weights, tau_w=0.01) -> float:
    """Fraction of samples whose contribution weight is at least tau_w."""
    if not 0.0 < tau_w < 1.0:
        raise ValueError("effective_rate: tau_w must be in (0,1)")
    w = np.asarray(weights, dtype=np.float64)
    return float(np.mean(w >= tau_w))
