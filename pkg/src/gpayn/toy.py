"""Tiny problems with known answers, for checking the learner in isolation."""
from __future__ import annotations

import numpy as np

from .buffer import ReplayBuffer
from .sac import SacAgent, SacConfig


def bandit_config(**overrides) -> SacConfig:
    base = dict(hidden=32, batch_size=64, train_freq=1, entropy_target=-1.0, buffer_capacity=20_000)
    base.update(overrides)
    return SacConfig(**base)


def train_bandit(steps: int = 20_000, seed: int = 0, config: SacConfig | None = None,
                 reward_fn=lambda a: -float(a[0] ** 2)) -> SacAgent:
    """One-state, one-step problem with a 1-D action; every transition is terminal."""
    cfg = config or bandit_config()
    agent = SacAgent(1, 1, cfg, seed=seed)
    buf = ReplayBuffer(cfg.buffer_capacity, 1, 1)
    obs = np.ones(1)
    for t in range(1, steps + 1):
        a = agent.act(obs)
        buf.add(obs, a, reward_fn(a), obs, True)
        if t % cfg.train_freq == 0 and len(buf) >= cfg.batch_size:
            for _ in range(cfg.gradient_steps):
                agent.update(buf)
    return agent


def train_constant_mdp(reward: float = 1.0, gamma: float = 0.9, steps: int = 3000, seed: int = 0) -> SacAgent:
    """One state that loops to itself forever with a constant reward.

    The temperature is pinned near zero so the soft value collapses to
    reward / (1 - gamma).
    """
    cfg = SacConfig(hidden=16, batch_size=32, gamma=gamma, train_freq=1, lr=3e-3, tau=0.05,
                    init_log_alpha=-30.0, entropy_target=-1e9, buffer_capacity=1000)
    agent = SacAgent(1, 1, cfg, seed=seed)
    agent.alpha_opt.lr = 0.0
    buf = ReplayBuffer(cfg.buffer_capacity, 1, 1)
    obs = np.ones(1)
    rng = np.random.default_rng(seed)
    for _ in range(cfg.batch_size):
        buf.add(obs, rng.uniform(-1, 1, 1), reward, obs, False)
    for _ in range(steps):
        agent.update(buf)
    return agent
