"""1-D point-mass control problem used to sanity-check the SAC learner in
isolation: state is a scalar position, the action commands a velocity in
[-1, 1], and reward is the negative squared distance to the goal."""

from __future__ import annotations

import numpy as np

from .sac import SacAgent, SacConfig


class PointMassEnv:
    """pos' = clip(pos + dt * a, +-pos_limit); r = -(pos' - goal)^2.

    Episodes truncate after ``horizon`` steps; starts are drawn uniformly
    from ``start`` so the random policy hovers far from the goal.
    """

    obs_dim = 1
    act_dim = 1

    def __init__(self, dt=0.15, goal=0.0, start=(0.8, 1.2), pos_limit=2.0,
                 horizon=20):
        self.dt = dt
        self.goal = goal
        self.start = start
        self.pos_limit = pos_limit
        self.horizon = horizon
        self.pos = 0.0
        self.steps = 0

    def reset(self, rng):
        self.pos = float(rng.uniform(*self.start))
        self.steps = 0
        return np.array([self.pos], dtype=np.float32)

    def step(self, action):
        a = float(np.clip(np.asarray(action).reshape(()), -1.0, 1.0))
        self.pos = float(np.clip(self.pos + self.dt * a,
                                 -self.pos_limit, self.pos_limit))
        self.steps += 1
        reward = -((self.pos - self.goal) ** 2)
        done = self.steps >= self.horizon
        return np.array([self.pos], dtype=np.float32), reward, done


def episode_return(env, rng, policy_fn):
    obs = env.reset(rng)
    total = 0.0
    done = False
    while not done:
        obs, r, done = env.step(policy_fn(obs))
        total += r
    return total


def random_policy_returns(n_episodes, rng, env=None):
    env = env or PointMassEnv()
    return np.array([episode_return(env, rng, lambda _: rng.uniform(-1.0, 1.0))
                     for _ in range(n_episodes)])


def measure_random_baseline(n_seeds=5, episodes_per_seed=200, base_seed=0):
    """Per-seed mean returns of the uniform-random policy, plus their mean
    and standard deviation across seeds.  Measured before any training so
    the competence margin is fixed up front."""
    means = []
    for s in range(n_seeds):
        rng = np.random.default_rng(base_seed + 1000 + s)
        means.append(float(np.mean(random_policy_returns(episodes_per_seed, rng))))
    means = np.array(means)
    return {"per_seed": means, "mean": float(means.mean()),
            "std": float(means.std(ddof=1))}


def toy_sac_config(**overrides):
    # small nets keep the 5-seed run well inside the time budget
    base = dict(hidden=(32, 32), batch_size=128, capacity=100_000,
                warmup_steps=1000)
    base.update(overrides)
    return SacConfig(**base)


def train_point_mass(seed, total_steps=20_000, config=None, eval_episodes=100):
    """Train SAC on the point mass; returns the eval summary and the agent."""
    cfg = config or toy_sac_config()
    rng = np.random.default_rng(seed)
    env = PointMassEnv()
    agent = SacAgent(env.obs_dim, env.act_dim, cfg, rng)
    obs = env.reset(rng)
    episode_returns, acc = [], 0.0
    metrics = []
    for step in range(total_steps):
        if step < cfg.warmup_steps:
            a = rng.uniform(-1.0, 1.0, size=1).astype(np.float32)
        else:
            a = agent.act(obs)
        next_obs, r, done = env.step(a)
        agent.buffer.add(obs, a, r, next_obs, done)
        acc += r
        if done:
            episode_returns.append(acc)
            acc = 0.0
            obs = env.reset(rng)
        else:
            obs = next_obs
        if step >= cfg.warmup_steps:
            for _ in range(cfg.updates_per_step):
                metrics.append(agent.update())
    eval_rng = np.random.default_rng(seed + 500_000)
    eval_env = PointMassEnv()
    evals = [episode_return(eval_env, eval_rng,
                            lambda o: agent.act(o, deterministic=True))
             for _ in range(eval_episodes)]
    return {"mean_return": float(np.mean(evals)), "eval_returns": np.array(evals),
            "episode_returns": np.array(episode_returns),
            "metrics": metrics, "agent": agent}
