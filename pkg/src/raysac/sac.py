"""Soft Actor-Critic: tanh-squashed Gaussian policy, twin Q-networks with
Polyak-averaged targets, uniform replay, and automatic temperature tuning.

Action sampling and bootstrap targets run on the plain-numpy forward path;
the autodiff tape is built only for the three loss terms of each update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .diffcore import MLP, Adam, Linear, Tensor, concat, copy_params, polyak_update

LOG_2PI = float(np.log(2.0 * np.pi))
TANH_EPS = 1e-6


@dataclass
class SacConfig:
    hidden: Tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    capacity: int = 1_000_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    target_entropy: Optional[float] = None  # defaults to -act_dim
    # start the temperature near its resting point: log_alpha only moves at
    # the Adam step size per update, and an alpha ~1 start spends thousands
    # of updates feeding critic targets dominated by the entropy bonus
    # instead of the reward scale
    init_log_alpha: float = -3.0
    bootstrap_on_truncation: bool = False

    def __post_init__(self):
        if not self.hidden:
            raise ValueError("need at least one hidden layer")
        if self.capacity < self.batch_size:
            raise ValueError("replay capacity smaller than batch size")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.log_std_min >= self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")


class PolicyNet:
    """Layer-normed relu trunk with mean and clamped log-std heads."""

    def __init__(self, obs_dim, act_dim, hidden, rng, log_std_min=-5.0,
                 log_std_max=2.0, name="policy"):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.log_std_min = float(log_std_min)
        self.log_std_max = float(log_std_max)
        self.trunk = MLP(obs_dim, list(hidden), None, rng, name=name)
        self.mean_head = Linear(hidden[-1], act_dim, rng, name=f"{name}.mean")
        self.log_std_head = Linear(hidden[-1], act_dim, rng, name=f"{name}.log_std")

    def forward_tape(self, obs: Tensor):
        h = self.trunk(obs)
        mu = self.mean_head(h)
        log_std = self.log_std_head(h).clip(self.log_std_min, self.log_std_max)
        return mu, log_std

    def forward_np(self, obs: np.ndarray):
        h = self.trunk.forward_np(obs)
        mu = self.mean_head.forward_np(h)
        log_std = np.clip(self.log_std_head.forward_np(h),
                          self.log_std_min, self.log_std_max)
        return mu, log_std

    def parameters(self):
        return (self.trunk.parameters() + self.mean_head.parameters()
                + self.log_std_head.parameters())


def sample_action(policy: PolicyNet, obs, rng=None, deterministic=False):
    """Draw a = tanh(mu + sigma * eps) and its log-density.

    The log-prob includes the tanh change-of-variables correction
    -sum log(1 - a^2 + 1e-6).  Deterministic mode returns tanh(mu) with the
    density evaluated at eps = 0.  obs: (B, obs_dim); returns (B, A), (B,).
    """
    obs = np.asarray(obs, dtype=np.float32)
    mu, log_std = policy.forward_np(obs)
    if deterministic:
        eps = np.zeros_like(mu)
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        eps = rng.standard_normal(mu.shape, dtype=np.float32)
    a = np.tanh(mu + np.exp(log_std) * eps)
    base = -(log_std + 0.5 * eps * eps + np.float32(0.5 * LOG_2PI)).sum(axis=-1)
    corr = np.log((1.0 + TANH_EPS) - a * a).sum(axis=-1)
    return a, base - corr


def _sample_action_tape(policy: PolicyNet, obs_t: Tensor, eps: np.ndarray):
    """Reparameterized draw on the tape for a fixed noise realization."""
    mu, log_std = policy.forward_tape(obs_t)
    a = (mu + log_std.exp() * Tensor(eps)).tanh()
    const = 0.5 * eps * eps + np.float32(0.5 * LOG_2PI)
    base = (-(log_std + Tensor(const))).sum(axis=1)
    corr = ((1.0 + TANH_EPS) - a.square()).log().sum(axis=1)
    return a, base - corr


class ReplayBuffer:
    """Preallocated ring buffer; sampled batches are copies, so later
    insertions never mutate a batch already handed out."""

    def __init__(self, capacity, obs_dim, act_dim):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self._n = 0
        self._i = 0

    def __len__(self):
        return self._n

    def add(self, obs, act, rew, next_obs, done):
        i = self._i
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._i = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, batch_size, rng):
        if self._n < batch_size:
            raise ValueError(f"buffer holds {self._n} < batch {batch_size}")
        idx = rng.integers(0, self._n, size=batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}


def _q_input(obs, act):
    return np.concatenate([obs, act], axis=1)


class SacAgent:
    """Twin-critic SAC with per-network Adam optimizers.

    Update order per call: critics against frozen targets, then the policy
    through the refreshed critics, then the temperature, then Polyak.
    Stray gradients a phase writes into other networks are cleared by that
    network's own zero_grad before its next step.
    """

    def __init__(self, obs_dim, act_dim, config: SacConfig, rng):
        self.config = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.rng = rng
        c = config
        hid = list(c.hidden)
        self.policy = PolicyNet(obs_dim, act_dim, hid, rng,
                                c.log_std_min, c.log_std_max)
        self.q1 = MLP(obs_dim + act_dim, hid, 1, rng, name="q1")
        self.q2 = MLP(obs_dim + act_dim, hid, 1, rng, name="q2")
        self.q1_target = MLP(obs_dim + act_dim, hid, 1, rng, name="q1t")
        self.q2_target = MLP(obs_dim + act_dim, hid, 1, rng, name="q2t")
        copy_params(self.q1.parameters(), self.q1_target.parameters())
        copy_params(self.q2.parameters(), self.q2_target.parameters())
        self.log_alpha = Tensor(np.array(c.init_log_alpha, dtype=np.float32),
                                requires_grad=True)
        self.target_entropy = (c.target_entropy if c.target_entropy is not None
                               else -float(act_dim))
        self.opt_policy = Adam(self.policy.parameters(), lr=c.lr)
        self.opt_q1 = Adam(self.q1.parameters(), lr=c.lr)
        self.opt_q2 = Adam(self.q2.parameters(), lr=c.lr)
        self.opt_alpha = Adam([("log_alpha", self.log_alpha)], lr=c.lr)
        self.buffer = ReplayBuffer(c.capacity, obs_dim, act_dim)
        self.update_count = 0
        self._last_logp = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))

    def act(self, obs, deterministic=False):
        a, _ = sample_action(self.policy, np.asarray(obs, dtype=np.float32)[None],
                             self.rng, deterministic)
        return a[0]

    # -- update phases --------------------------------------------------

    def critic_targets(self, batch):
        """y = r + gamma * mask * (min_i Q'_i(s', a') - alpha * log pi(a'|s'))."""
        a2, logp2 = sample_action(self.policy, batch["next_obs"], self.rng)
        x2 = _q_input(batch["next_obs"], a2)
        qmin = np.minimum(self.q1_target.forward_np(x2)[:, 0],
                          self.q2_target.forward_np(x2)[:, 0])
        c = self.config
        mask = np.ones_like(batch["done"]) if c.bootstrap_on_truncation \
            else 1.0 - batch["done"]
        return (batch["rew"] + c.gamma * mask
                * (qmin - np.float32(self.alpha) * logp2)).astype(np.float32)

    def update_critics(self, batch):
        y = self.critic_targets(batch)
        B = y.shape[0]
        x = Tensor(_q_input(batch["obs"], batch["act"]))
        y_t = Tensor(y)
        self.opt_q1.zero_grad()
        self.opt_q2.zero_grad()
        loss1 = (self.q1(x).reshape(B) - y_t).square().mean()
        loss2 = (self.q2(x).reshape(B) - y_t).square().mean()
        (loss1 + loss2).backward()
        self.opt_q1.step()
        self.opt_q2.step()
        return float(loss1.data), float(loss2.data)

    def update_policy(self, batch):
        obs = batch["obs"]
        B = obs.shape[0]
        eps = self.rng.standard_normal((B, self.act_dim), dtype=np.float32)
        obs_t = Tensor(obs)
        a_t, logp_t = _sample_action_tape(self.policy, obs_t, eps)
        q_in = concat([obs_t, a_t], axis=1)
        qmin = self.q1(q_in).reshape(B).minimum(self.q2(q_in).reshape(B))
        loss = (logp_t * float(self.alpha) - qmin).mean()
        self.opt_policy.zero_grad()
        loss.backward()
        self.opt_policy.step()
        entropy = -float(logp_t.data.mean())
        self._last_logp = logp_t.data
        return float(loss.data), entropy

    def update_temperature(self, batch, logp=None):
        """One step on log_alpha against E[log pi] + target entropy.

        Reuses the policy phase's log-probs when given; otherwise draws a
        fresh batch of actions.
        """
        if logp is None:
            _, logp = sample_action(self.policy, batch["obs"], self.rng)
        coeff = float(np.mean(logp) + self.target_entropy)
        loss = self.log_alpha * (-coeff)
        self.opt_alpha.zero_grad()
        loss.backward()
        self.opt_alpha.step()
        return self.alpha, float(loss.data)

    def polyak(self):
        polyak_update(self.q1.parameters(), self.q1_target.parameters(),
                      self.config.tau)
        polyak_update(self.q2.parameters(), self.q2_target.parameters(),
                      self.config.tau)

    def update(self, batch=None):
        if batch is None:
            batch = self.buffer.sample(self.config.batch_size, self.rng)
        q1_loss, q2_loss = self.update_critics(batch)
        policy_loss, entropy = self.update_policy(batch)
        alpha, alpha_loss = self.update_temperature(batch, logp=self._last_logp)
        self.polyak()
        self.update_count += 1
        return {"q1_loss": q1_loss, "q2_loss": q2_loss,
                "policy_loss": policy_loss, "alpha_loss": alpha_loss,
                "alpha": alpha, "entropy": entropy}

    def parameters(self):
        return (self.policy.parameters() + self.q1.parameters()
                + self.q2.parameters() + self.q1_target.parameters()
                + self.q2_target.parameters() + [("log_alpha", self.log_alpha)])
