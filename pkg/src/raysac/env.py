"""The per-ray sample-placement MDP: observations over the current depth
configuration, bounded relative adjustments as actions, deterministic
transitions through the frozen field, and a three-term reward.

All core computations are batched over rays (leading axis R); the
RaySamplingEnv used by the training loop wraps the batch-of-one case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baselines import stratified_samples
from .field import RadianceField
from .render import composite_batch
from .scenes import Ray

# Rec.601 luma weights for the per-component brightness feature
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class EnvConfig:
    n_samples: int = 32
    K: int = 3
    T_ep: int = 8
    delta_max_frac: float = 0.1
    delta_min_frac: float = 0.001
    tau_w: float = 0.01
    lambda_q: float = 1.0
    lambda_e: float = 0.1
    lambda_eff: float = 0.1
    lambda_c: float = 0.01
    gamma: float = 0.99

    def __post_init__(self):
        if self.n_samples * self.delta_min_frac >= 1.0:
            raise ValueError("infeasible spacing: N * delta_min exceeds the depth range")
        for name in ("lambda_q", "lambda_e", "lambda_eff", "lambda_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def obs_dim(config: EnvConfig) -> int:
    return config.n_samples * 9 + 11 + config.K * 3


def apply_action(depths, action, config: EnvConfig, bounds):
    """Move each depth by its action times the max step, then restore validity:
    clip to bounds, sort, forward min-spacing sweep, and a backward sweep if
    the clamp at t_f is hit.  Works on (N,) or batched (R, N) arrays."""
    t_n, t_f = bounds
    rng_len = t_f - t_n
    d_max = config.delta_max_frac * rng_len
    d_min = config.delta_min_frac * rng_len
    N = np.asarray(depths).shape[-1]
    if (N - 1) * d_min >= rng_len:
        raise ValueError("infeasible spacing: N * delta_min exceeds the depth range")
    a = np.asarray(action, dtype=np.float64)
    if np.any(a < -1.0) or np.any(a > 1.0):
        raise ValueError("action components must lie in [-1, 1]")
    t = np.asarray(depths, dtype=np.float64) + a * d_max
    t = np.clip(t, t_n, t_f)
    t = np.sort(t, axis=-1)
    squeeze = t.ndim == 1
    if squeeze:
        t = t[None]
    for i in range(1, N):
        np.maximum(t[:, i], t[:, i - 1] + d_min, out=t[:, i])
    over = t[:, -1] > t_f
    if np.any(over):
        sub = t[over]
        sub[:, -1] = t_f
        for i in range(N - 2, -1, -1):
            np.minimum(sub[:, i], sub[:, i + 1] - d_min, out=sub[:, i])
        t[over] = sub
    return t[0] if squeeze else t


def _field_batch(field: RadianceField, origins, dirs, depths):
    """Query the field at (R, N) depths along rays; returns per-sample arrays."""
    R, N = depths.shape
    pts = origins[:, None, :] + depths[:, :, None] * dirs[:, None, :]
    d_rep = np.repeat(dirs, N, axis=0)
    sigma, pi, mu, var = field.query_np(pts.reshape(-1, 3).astype(np.float32), d_rep)
    K = pi.shape[-1]
    return (sigma.reshape(R, N), pi.reshape(R, N, K),
            mu.reshape(R, N, K, 3), var.reshape(R, N, K, 3))


class RayBatchState:
    """Everything known about R rays at their current depth placement."""

    def __init__(self, depths, sigma, pi, mu, var, comp, gt, bounds):
        self.depths = depths        # (R, N) float64
        self.sigma = sigma          # (R, N)
        self.pi = pi                # (R, N, K)
        self.mu = mu                # (R, N, K, 3)
        self.var = var              # (R, N, K, 3)
        self.weights = comp["weights"]
        self.trans = comp["trans"]
        self.alphas = comp["alphas"]
        self.color = comp["color"]  # (R, 3)
        self.resid = comp["resid"]
        self.gt = gt                # (R, 3)
        self.bounds = bounds
        self.mse = np.mean((self.color - gt) ** 2, axis=-1)  # (R,)

    # per-sample expected color and channel-mean total variance
    def sample_moments(self):
        exp_c = (self.pi[..., None] * self.mu).sum(axis=2)              # (R,N,3)
        alea = (self.pi[..., None] * self.var).sum(axis=2)
        epi = (self.pi[..., None] * (self.mu - exp_c[:, :, None, :]) ** 2).sum(axis=2)
        return exp_c, (alea + epi).mean(axis=-1)                         # (R,N)


def make_state(field, origins, dirs, depths, gt, bounds) -> RayBatchState:
    sigma, pi, mu, var = _field_batch(field, origins, dirs, depths)
    comp = composite_batch(depths, sigma, (pi[..., None] * mu).sum(axis=2),
                           bounds[1])
    return RayBatchState(depths, sigma, pi, mu, var, comp, gt, bounds)


def build_observation_batch(state: RayBatchState, origins, dirs, uv, step_index,
                            config: EnvConfig):
    """(R, N*9 + 11 + K*3) float32 observation block."""
    t_n, t_f = state.bounds
    R, N = state.depths.shape
    K = config.K
    exp_c, tot_var = state.sample_moments()
    t_hat = (state.depths - t_n) / (t_f - t_n)
    per = np.empty((R, N, 9), dtype=np.float64)
    per[..., 0] = t_hat
    per[..., 1:4] = exp_c
    per[..., 4] = state.sigma
    per[..., 5] = state.trans
    per[..., 6] = state.weights
    per[..., 7] = state.alphas
    per[..., 8] = tot_var

    glob = np.empty((R, 11), dtype=np.float64)
    glob[:, 0:3] = origins
    glob[:, 3:6] = dirs
    glob[:, 6] = t_n
    glob[:, 7] = t_f
    glob[:, 8:10] = uv
    glob[:, 10] = step_index / config.T_ep

    w = state.weights
    mix_raw = (w[..., None] * state.pi).sum(axis=1)                  # (R, K)
    tot = mix_raw.sum(axis=1, keepdims=True)
    pi_bar = np.where(tot > 0, mix_raw / np.where(tot > 0, tot, 1.0), 1.0 / K)
    c_k = (w[..., None, None] * state.mu).sum(axis=1)                # (R, K, 3)
    lum = (c_k * _LUMA).sum(axis=-1)                                 # (R, K)
    var_k = ((w ** 2)[..., None, None] * state.var).sum(axis=1).mean(axis=-1)
    unc = np.stack([pi_bar, lum, var_k], axis=-1)                    # (R, K, 3)

    obs = np.concatenate([per.reshape(R, N * 9), glob, unc.reshape(R, K * 3)],
                         axis=1).astype(np.float32)
    if not np.all(np.isfinite(obs)):
        raise FloatingPointError("non-finite feature in observation")
    return obs


def build_observation(state: RayBatchState, ray: Ray, step_index, config: EnvConfig):
    return build_observation_batch(state, ray.origin[None], ray.direction[None],
                                   np.array([[ray.u, ray.v]]), step_index, config)[0]


def reward_components(prev_state: RayBatchState, curr_state: RayBatchState,
                      config: EnvConfig):
    """Per-ray reward terms; R = lambda_q R_q + lambda_e R_e + lambda_c R_c."""
    eps = 1e-8
    r_q = 10.0 * np.log10(np.maximum(prev_state.mse, eps)
                          / np.maximum(curr_state.mse, eps))
    low = (curr_state.weights < config.tau_w).sum(axis=-1)
    r_e = -config.lambda_eff * low
    gaps = np.diff(curr_state.depths, axis=-1)
    r_c = -((np.diff(gaps, axis=-1) ** 2).sum(axis=-1))
    total = config.lambda_q * r_q + config.lambda_e * r_e + config.lambda_c * r_c
    return total, {"r_q": r_q, "r_e": r_e, "r_c": r_c}


def compute_reward(prev_state, curr_state, gt_color, config):
    """Single-ray wrapper matching the documented reward contract."""
    total, comps = reward_components(prev_state, curr_state, config)
    return float(total[0]), {k: float(v[0]) for k, v in comps.items()}


class BatchedRayEnv:
    """R rays refined in lockstep; the evaluation path runs whole views here."""

    def __init__(self, field: RadianceField, config: EnvConfig, rng):
        self.field = field
        self.config = config
        self.rng = rng
        self.state = None
        self.step_index = 0

    def reset(self, origins, dirs, uv, gt, bounds, depths=None):
        R = origins.shape[0]
        N = self.config.n_samples
        if depths is None:
            depths = np.stack([stratified_samples(bounds[0], bounds[1], N, self.rng)
                               for _ in range(R)])
        self.origins, self.dirs, self.uv, self.gt = origins, dirs, uv, gt
        self.bounds = bounds
        self.state = make_state(self.field, origins, dirs, depths, gt, bounds)
        self.step_index = 0
        return build_observation_batch(self.state, origins, dirs, uv, 0, self.config)

    def step(self, actions):
        cfg = self.config
        depths = apply_action(self.state.depths, actions, cfg, self.bounds)
        prev = self.state
        self.state = make_state(self.field, self.origins, self.dirs, depths,
                                self.gt, self.bounds)
        reward, comps = reward_components(prev, self.state, cfg)
        self.step_index += 1
        done = self.step_index >= cfg.T_ep
        obs = build_observation_batch(self.state, self.origins, self.dirs, self.uv,
                                      self.step_index, cfg)
        return obs, reward, done, comps

    def set_depths(self, depths):
        """Overwrite the placement (state cache recomputed); used to verify
        the transition depends only on (depths, action)."""
        self.state = make_state(self.field, self.origins, self.dirs,
                                np.asarray(depths, dtype=np.float64),
                                self.gt, self.bounds)


class RaySamplingEnv:
    """Single-ray view of the MDP, as consumed by the SAC training loop."""

    def __init__(self, field: RadianceField, config: EnvConfig, rng):
        self._batch = BatchedRayEnv(field, config, rng)
        self.config = config

    def reset(self, ray: Ray, gt_color):
        obs = self._batch.reset(ray.origin[None].astype(np.float64),
                                ray.direction[None].astype(np.float64),
                                np.array([[ray.u, ray.v]]),
                                np.asarray(gt_color, dtype=np.float64)[None],
                                (ray.t_near, ray.t_far))
        return obs[0]

    def step(self, action):
        obs, reward, done, comps = self._batch.step(np.asarray(action)[None])
        return obs[0], float(reward[0]), done, {k: float(v[0]) for k, v in comps.items()}

    @property
    def depths(self):
        return self._batch.state.depths[0]

    @property
    def state(self):
        return self._batch.state

    def set_depths(self, depths):
        self._batch.set_depths(np.asarray(depths, dtype=np.float64)[None])
