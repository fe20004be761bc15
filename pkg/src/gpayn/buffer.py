"""Ring replay buffer with optional demonstration pre-fill."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demos import ConfigHashMismatch, DemoBuffer
from .reward import TerminationCause

# Termination codes after which there is no next state to bootstrap from.
# Timeouts are truncations, not terminal states.
TERMINAL_CODES = (int(TerminationCause.SUCCESS), int(TerminationCause.OBJECT_DISPLACED),
                  int(TerminationCause.IK_INFEASIBLE))


class BufferTooSmall(RuntimeError):
    pass


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray  # normalized to [-1, 1]
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray  # 1.0 where the transition ends in a terminal state
    is_demo: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """FIFO ring buffer; eviction skips the oldest ``demo_floor`` demo slots."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, demo_floor: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0 <= demo_floor < capacity:
            raise ValueError("demo_floor must be in [0, capacity)")
        self.capacity = capacity
        self.demo_floor = demo_floor
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.is_demo = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0
        self._protected = 0  # slots [0, _protected) hold retained demos
        self.samples_drawn = 0

    def __len__(self) -> int:
        return self.size

    @property
    def demo_count(self) -> int:
        return int(self.is_demo[:self.size].sum())

    def add(self, obs, action, reward: float, next_obs, done: bool, is_demo: bool = False):
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.is_demo[i] = is_demo
        if is_demo and i == self._protected and self._protected < self.demo_floor:
            self._protected += 1
        self.size = min(self.size + 1, self.capacity)
        self._next += 1
        if self._next == self.capacity:
            self._next = self._protected

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size < n:
            raise BufferTooSmall(f"buffer holds {self.size} transitions, batch needs {n}")
        idx = rng.integers(0, self.size, n)
        self.samples_drawn += n
        return self.take(idx)

    def take(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx],
                     self.done[idx], self.is_demo[idx])

    def arrays(self) -> dict[str, np.ndarray]:
        return {"obs": self.obs, "actions": self.actions, "rewards": self.rewards,
                "next_obs": self.next_obs, "done": self.done, "is_demo": self.is_demo}


def normalize_actions(actions: np.ndarray, limits: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(actions, dtype=np.float64) / limits, -1.0, 1.0)


def demo_arrays(demos: DemoBuffer, limits: np.ndarray):
    """Demo records as float64 arrays with normalized actions and terminal flags."""
    done = np.isin(demos.done, TERMINAL_CODES).astype(np.float64)
    return (demos.obs.astype(np.float64), normalize_actions(demos.actions, limits),
            demos.rewards.astype(np.float64), demos.next_obs.astype(np.float64), done)


def gpayn_init(buffer: ReplayBuffer, demos: DemoBuffer, limits: np.ndarray,
               expected_hash: str | None = None) -> ReplayBuffer:
    """Pre-fill ``buffer`` with every demo transition, flagged as demo."""
    if expected_hash is not None and demos.env_config_hash != expected_hash:
        raise ConfigHashMismatch(f"demos were collected under {demos.env_config_hash}, env is {expected_hash}")
    for o, a, r, o2, d in zip(*demo_arrays(demos, limits)):
        buffer.add(o, a, r, o2, bool(d), is_demo=True)
    return buffer


def demo_sampler_buffer(demos: DemoBuffer, limits: np.ndarray) -> ReplayBuffer:
    """Separate fixed buffer holding only the demos (used by the BC baseline)."""
    buf = ReplayBuffer(max(len(demos), 1), demos.obs_dim, demos.actions.shape[1])
    return gpayn_init(buf, demos, limits)
