"""Radiance field: positional encoding, density trunk, and a Gaussian-mixture
color head that decomposes predictive uncertainty.

The network maps (position, view direction) to a density sigma and a K-component
diagonal-Gaussian mixture over RGB.  Density comes from a position-only trunk;
the color branch additionally sees the encoded direction and emits K*7 raw
values per sample: 3 means (sigmoid to [0,1]), 3 pre-softplus log-variances
(floored), and 1 pre-softmax mixture logit per component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import MLP, Linear, Tensor, concat
from .diffcore.tensor import sigmoid_np, softmax_np, softplus_np

VAR_FLOOR = 1e-4


@dataclass
class FieldConfig:
    hidden_layers: int = 4
    hidden_width: int = 64
    pos_enc_levels: int = 6
    dir_enc_levels: int = 4
    K: int = 3

    def __post_init__(self):
        if self.K < 1 or self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("FieldConfig: K, widths and depths must be >= 1")


@dataclass
class GmmColor:
    """Mixture over RGB.  mu is in color space (post-sigmoid), var post-floor."""
    pi: np.ndarray   # (K,)
    mu: np.ndarray   # (K, 3)
    var: np.ndarray  # (K, 3)


@dataclass
class FieldOutput:
    sigma: float
    color: GmmColor


def positional_encode(x, levels):
    """Sinusoidal features: raw x then (sin(2^l pi x), cos(2^l pi x)) per level.

    Accepts (..., 3); returns (..., 3 + 6*levels) float32.
    """
    x = np.asarray(x, dtype=np.float32)
    parts = [x]
    for l in range(levels):
        arg = (2.0 ** l) * np.float32(np.pi) * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1).astype(np.float32)


class RadianceField:
    def __init__(self, config: FieldConfig, rng):
        self.config = config
        c = config
        pos_dim = 3 + 6 * c.pos_enc_levels
        dir_dim = 3 + 6 * c.dir_enc_levels
        w = c.hidden_width
        self.trunk = MLP(pos_dim, [w] * c.hidden_layers, None, rng,
                         name="field.trunk", use_layer_norm=False)
        self.sigma_head = Linear(w, 1, rng, name="field.sigma")
        self.color_hidden = Linear(w + dir_dim, w, rng, name="field.color_hidden")
        self.color_out = Linear(w, c.K * 7, rng, name="field.color_out")

    def parameters(self):
        return (self.trunk.parameters() + self.sigma_head.parameters()
                + self.color_hidden.parameters() + self.color_out.parameters())

    # -- training path (autodiff graph) --------------------------------

    def forward_tape(self, x_enc: Tensor, d_enc: Tensor):
        """Batched forward on encoded inputs (P, pos_dim) and (P, dir_dim).

        Returns Tensors: sigma (P,), pi (P,K), mu (P,K,3), var (P,K,3).
        mu is post-sigmoid, var post-softplus with the floor added.
        """
        K = self.config.K
        h = self.trunk(x_enc)
        sigma = self.sigma_head(h).softplus().reshape(h.shape[0])
        ch = self.color_hidden(concat([h, d_enc], axis=1)).relu()
        raw = self.color_out(ch)
        P = raw.shape[0]
        mu = raw[:, : 3 * K].reshape(P, K, 3).sigmoid()
        var = raw[:, 3 * K: 6 * K].reshape(P, K, 3).softplus() + VAR_FLOOR
        pi = raw[:, 6 * K:].softmax()
        return sigma, pi, mu, var

    # -- inference path (plain numpy, identical arithmetic) -------------

    def query_np(self, x: np.ndarray, d: np.ndarray):
        """Batched tape-free forward.  x: (P,3); d: (P,3) or a single (3,).

        Returns float32 arrays sigma (P,), pi (P,K), mu (P,K,3), var (P,K,3).
        """
        K = self.config.K
        x = np.asarray(x, dtype=np.float32).reshape(-1, 3)
        d = np.asarray(d, dtype=np.float32)
        if d.ndim == 1:
            d = np.broadcast_to(d, x.shape)
        x_enc = positional_encode(x, self.config.pos_enc_levels)
        d_enc = positional_encode(d, self.config.dir_enc_levels)
        h = self.trunk.forward_np(x_enc)
        sigma = softplus_np(self.sigma_head.forward_np(h))[:, 0]
        ch = np.maximum(self.color_hidden.forward_np(np.concatenate([h, d_enc], axis=1)), 0)
        raw = self.color_out.forward_np(ch)
        P = raw.shape[0]
        mu = sigmoid_np(raw[:, : 3 * K].reshape(P, K, 3))
        var = softplus_np(raw[:, 3 * K: 6 * K].reshape(P, K, 3)) + np.float32(VAR_FLOOR)
        pi = softmax_np(raw[:, 6 * K:])
        return sigma, pi, mu, var


def query_field(field: RadianceField, x, d) -> FieldOutput:
    """Single-point query. d must be unit-norm within 1e-4."""
    d = np.asarray(d, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-4:
        raise ValueError("query_field: direction must be unit norm within 1e-4")
    sigma, pi, mu, var = field.query_np(np.asarray(x, dtype=np.float32).reshape(1, 3),
                                        d.astype(np.float32))
    out = FieldOutput(float(sigma[0]), GmmColor(pi[0], mu[0], var[0]))
    if not (np.isfinite(out.sigma) and np.all(np.isfinite(pi)) and np.all(np.isfinite(mu))
            and np.all(np.isfinite(var))):
        raise FloatingPointError("query_field: non-finite output (corrupt parameters?)")
    return out


def gmm_moments(g: GmmColor):
    """Law of total variance for the mixture.

    E[c] = sum_k pi_k mu_k
    aleatoric = sum_k pi_k var_k         (within-component)
    epistemic = sum_k pi_k (mu_k - E)^2  (between-component)
    total = aleatoric + epistemic
    """
    pi = np.asarray(g.pi, dtype=np.float64)[:, None]
    mu = np.asarray(g.mu, dtype=np.float64)
    var = np.asarray(g.var, dtype=np.float64)
    expected = (pi * mu).sum(axis=0)
    aleatoric = (pi * var).sum(axis=0)
    epistemic = (pi * (mu - expected) ** 2).sum(axis=0)
    return expected, aleatoric + epistemic, aleatoric, epistemic


def gmm_nll(g: GmmColor, c_obs) -> float:
    """-log sum_k pi_k prod_ch N(c_obs; mu_k, var_k), via log-sum-exp."""
    c = np.asarray(c_obs, dtype=np.float64)
    pi = np.asarray(g.pi, dtype=np.float64)
    mu = np.asarray(g.mu, dtype=np.float64)
    var = np.asarray(g.var, dtype=np.float64)
    log_comp = -0.5 * (np.log(2 * np.pi * var) + (c - mu) ** 2 / var).sum(axis=1)
    z = np.log(pi) + log_comp
    m = z.max()
    return float(-(m + np.log(np.exp(z - m).sum())))


def gmm_nll_tape(pi: Tensor, mu: Tensor, var: Tensor, c_obs: np.ndarray) -> Tensor:
    """Differentiable batched mixture NLL, mean over the batch.

    pi (B,K), mu (B,K,3), var (B,K,3), c_obs (B,3).  Same math as gmm_nll.
    """
    B, K = pi.shape
    c = np.asarray(c_obs, dtype=np.float32).reshape(B, 1, 3)
    c_t = Tensor(np.broadcast_to(c, (B, K, 3)).copy())
    diff = mu - c_t
    log_var = var.log()
    quad = diff.square() / var
    log_comp = (log_var + quad).sum(axis=2) * (-0.5) - (1.5 * np.log(2 * np.pi))
    z = pi.log() + log_comp
    return -(z.logsumexp().mean())
