"""Scripted three-phase demonstrations (approach, close, lift) and their on-disk format.

Binary layout of a demo buffer file (all little-endian)::

    offset  size  field
    0       8     magic  b"GPAYNDB1"
    8       4     u32 schema_version
    12      4     u32 header_len (bytes of UTF-8 JSON that follow)
    16      H     JSON header {schema_version, env_config_hash, transition_count,
                               success_count, episode_count, obs_dim, action_dim}
    16+H    N*R   records, R = 4*(2*obs_dim + action_dim + 1) + 1 bytes:
                  obs f32[obs_dim] | action f32[15] | reward f32 | next_obs f32[obs_dim] | done u8

``done`` holds the termination code (0 running, 1 success, 2 displaced,
3 infeasible, 4 timeout), so episode boundaries and outcomes are recoverable
from the records alone.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import ACTION_DIM, Action, GraspEnv, HandState, PreGraspInfeasible, start_episode
from .grasp_prior import GraspPlan, GraspSource, NoReachableCandidate
from .hand import HandModel
from .reward import TerminationCause

log = logging.getLogger(__name__)

APPROACH_STEPS = 100
CLOSE_STEPS = 500
LIFT_STEP = 0.002  # m per step
CLOSE_RATE_DIVISOR = 250.0
SCHEMA_VERSION = 1
MAGIC = b"GPAYNDB1"


class SchemaMismatch(ValueError):
    pass


class ConfigHashMismatch(ValueError):
    pass


def phase_of(step_index: int) -> str:
    if step_index < APPROACH_STEPS:
        return "approach"
    if step_index < APPROACH_STEPS + CLOSE_STEPS:
        return "close"
    return "lift"


@dataclass
class PhaseState:
    tmp_fingers: np.ndarray = field(default_factory=lambda: np.zeros(9))


def scripted_action(step_index: int, hand_state: HandState, plan: GraspPlan, hand: HandModel,
                    phase_state: PhaseState, literal_schedule: bool = False) -> Action:
    """One action of the approach/close/lift script.

    The closing target interpolates open->closed over the 500 closing steps;
    ``literal_schedule`` uses (step - 500)/500 instead.
    """
    zero3 = np.zeros(3)
    phase = phase_of(step_index)
    if phase == "approach":
        offset = (plan.grasp_pose.position - plan.pre_grasp_pose.position) / APPROACH_STEPS
        return Action(offset, zero3.copy(), np.zeros(9))
    if phase == "close":
        delta = hand.qpos_close - hand.qpos_open
        a1 = delta / CLOSE_RATE_DIVISOR
        shift = CLOSE_STEPS if literal_schedule else APPROACH_STEPS
        progress = (step_index - shift) / CLOSE_STEPS
        a2 = hand.qpos_open + progress * delta - hand_state.qpos
        fingers = np.minimum(a1, a2)
        phase_state.tmp_fingers = fingers.copy()
        return Action(zero3.copy(), zero3.copy(), fingers)
    return Action(np.array([0.0, 0.0, LIFT_STEP]), zero3.copy(), phase_state.tmp_fingers.copy())


@dataclass
class DemoBuffer:
    """Flat transition arrays plus the header fields of a demo buffer file."""

    obs: np.ndarray  # f32 (N, D)
    actions: np.ndarray  # f32 (N, 15)
    rewards: np.ndarray  # f32 (N,)
    next_obs: np.ndarray  # f32 (N, D)
    done: np.ndarray  # u8 (N,) termination code
    env_config_hash: str
    episode_count: int = 0
    skipped_episodes: int = 0
    schema_version: int = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    @property
    def success_count(self) -> int:
        return int((self.done == int(TerminationCause.SUCCESS)).sum())

    @property
    def finished_episodes(self) -> int:
        return int((self.done != 0).sum())

    @property
    def success_rate(self) -> float:
        n = self.finished_episodes
        return self.success_count / n if n else 0.0

    def episode_lengths(self) -> list[tuple[int, int]]:
        """(length, termination code) for every finished episode, in order."""
        out, start = [], 0
        for i in np.flatnonzero(self.done):
            out.append((int(i - start + 1), int(self.done[i])))
            start = i + 1
        return out

    @classmethod
    def empty(cls, obs_dim: int, env_config_hash: str) -> "DemoBuffer":
        return cls(np.zeros((0, obs_dim), np.float32), np.zeros((0, ACTION_DIM), np.float32),
                   np.zeros(0, np.float32), np.zeros((0, obs_dim), np.float32),
                   np.zeros(0, np.uint8), env_config_hash)

    def header(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "env_config_hash": self.env_config_hash,
            "transition_count": len(self),
            "success_count": self.success_count,
            "episode_count": self.episode_count,
            "skipped_episodes": self.skipped_episodes,
            "obs_dim": self.obs_dim,
            "action_dim": ACTION_DIM,
        }

    def manifest(self) -> dict:
        return {
            **self.header(),
            "finished_episodes": self.finished_episodes,
            "success_rate": self.success_rate,
            "episodes": [[n, c] for n, c in self.episode_lengths()],
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemoBuffer):
            return NotImplemented
        return (self.header() == other.header()
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("obs", "actions", "rewards", "next_obs", "done")))


def _record_dtype(obs_dim: int) -> np.dtype:
    return np.dtype([("obs", "<f4", (obs_dim,)), ("action", "<f4", (ACTION_DIM,)),
                     ("reward", "<f4"), ("next_obs", "<f4", (obs_dim,)), ("done", "u1")])


def save_demos(buf: DemoBuffer, path: str | Path, manifest: bool = True) -> Path:
    path = Path(path)
    rec = np.zeros(len(buf), dtype=_record_dtype(buf.obs_dim))
    rec["obs"], rec["action"], rec["reward"] = buf.obs, buf.actions, buf.rewards
    rec["next_obs"], rec["done"] = buf.next_obs, buf.done
    head = json.dumps(buf.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", SCHEMA_VERSION, len(head)))
        fh.write(head)
        fh.write(rec.tobytes())
    if manifest:
        Path(str(path) + ".manifest.json").write_text(json.dumps(buf.manifest(), indent=1, sort_keys=True))
    return path


def load_demos(path: str | Path, expected_hash: str | None = None, force: bool = False) -> DemoBuffer:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC or len(data) < 16:
        raise SchemaMismatch(f"{path}: not a demo buffer file")
    version, hlen = struct.unpack("<II", data[8:16])
    try:
        head = json.loads(data[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaMismatch(f"{path}: corrupted header") from e
    if version != SCHEMA_VERSION or head.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: schema version {version} != {SCHEMA_VERSION}")
    if expected_hash is not None and head["env_config_hash"] != expected_hash and not force:
        raise ConfigHashMismatch(
            f"{path}: collected under env config {head['env_config_hash']}, expected {expected_hash}")
    dt = _record_dtype(head["obs_dim"])
    body = data[16 + hlen:]
    if len(body) != head["transition_count"] * dt.itemsize:
        raise SchemaMismatch(f"{path}: record block size does not match transition_count")
    rec = np.frombuffer(body, dtype=dt)
    buf = DemoBuffer(rec["obs"].copy(), rec["action"].copy(), rec["reward"].copy(),
                     rec["next_obs"].copy(), rec["done"].copy(), head["env_config_hash"],
                     head.get("episode_count", 0), head.get("skipped_episodes", 0))
    if buf.success_count != head["success_count"]:
        raise SchemaMismatch(f"{path}: success_count does not match records")
    return buf


@dataclass
class EpisodeRecord:
    length: int
    termination: TerminationCause
    infos: list = field(default_factory=list)


def run_scripted_episode(env: GraspEnv, plan: GraspPlan, on_step: Callable | None = None,
                         literal_schedule: bool = False) -> EpisodeRecord:
    """Roll the script from an already-reset env until termination."""
    phase = PhaseState()
    obs = env.observation()
    while True:
        act = scripted_action(env.step_index, env.hand_state, plan, env.hand, phase, literal_schedule)
        res = env.step(act)
        if on_step is not None:
            on_step(obs, act, res)
        obs = res.observation
        if res.done:
            return EpisodeRecord(env.step_index, res.termination)


def collect_demos(env: GraspEnv, quota: int, seed: int, mode: GraspSource = GraspSource.LATERAL,
                  noise_std: float = 0.0, literal_schedule: bool = False,
                  success_only: bool = False, max_episodes: int | None = None) -> DemoBuffer:
    """Run scripted episodes until at least ``quota`` transitions are stored."""
    D = env.config.obs_dim
    obs_l, act_l, rew_l, nxt_l, done_l = [], [], [], [], []
    n_trans = 0
    episodes = skipped = 0
    ss = np.random.SeedSequence(seed)
    while n_trans < quota and (max_episodes is None or episodes < max_episodes):
        ep_seed = int(ss.spawn(1)[0].generate_state(1, dtype=np.uint64)[0])
        try:
            _, plan, _ = start_episode(env, ep_seed, mode, noise_std, max_tries=1)
        except (NoReachableCandidate, PreGraspInfeasible):
            skipped += 1
            continue
        ep = ([], [], [], [], [])

        def keep(o, a, r, ep=ep):
            ep[0].append(o.vector())
            ep[1].append(a.vector())
            ep[2].append(r.reward.total)
            ep[3].append(r.observation.vector())
            ep[4].append(int(r.termination))

        rec = run_scripted_episode(env, plan, keep, literal_schedule)
        episodes += 1
        if success_only and rec.termination is not TerminationCause.SUCCESS:
            continue
        for dst, src in zip((obs_l, act_l, rew_l, nxt_l, done_l), ep):
            dst.extend(src)
        n_trans += rec.length
    log.info("collected %d transitions from %d episodes (%d skipped)", n_trans, episodes, skipped)
    if not n_trans:
        buf = DemoBuffer.empty(D, env.config.config_hash())
    else:
        buf = DemoBuffer(np.asarray(obs_l, np.float32), np.asarray(act_l, np.float32),
                         np.asarray(rew_l, np.float32), np.asarray(nxt_l, np.float32),
                         np.asarray(done_l, np.uint8), env.config.config_hash())
    buf.episode_count = episodes
    buf.skipped_episodes = skipped
    return buf
