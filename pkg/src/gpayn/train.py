"""Training loop for SAC, G-PAYN (demo pre-filled SAC) and OERLD (SAC + BC), with evaluation and metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffer import ReplayBuffer, TERMINAL_CODES, demo_sampler_buffer, gpayn_init
from .demos import DemoBuffer
from .env import ACTION_DIM, GraspEnv, start_episode
from .grasp_prior import GraspSource
from .reward import TerminationCause
from .sac import Losses, SacAgent, SacConfig

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("kind", "env_steps", "episode", "success", "episode_length", "episode_return",
                  "r_fingers", "r_dist", "r_height", "r_end", "alpha", "actor_loss", "critic_loss",
                  "eval_success_rate", "eval_mean_length")


class TrainingDiverged(RuntimeError):
    pass


class MissingDemos(ValueError):
    pass


def obs_scale(obs_dim: int) -> np.ndarray:
    """Fixed input scaling: positions to decimetres, angles to units of pi, the rest untouched."""
    s = np.ones(obs_dim)
    s[0:3] = 10.0
    s[3:6] = 1.0 / np.pi
    s[20:23] = 10.0
    return s


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class MetricsWriter:
    """CSV with comment lines carrying the config hash and seed."""

    def __init__(self, path: str | Path | None, meta: dict):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        self.meta = meta

    def add(self, **row):
        self.rows.append({c: row.get(c, "") for c in METRIC_COLUMNS})

    def text(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.meta):
            buf.write(f"# {k}={self.meta[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) if r[c] != "" else "" for c in METRIC_COLUMNS])
        return buf.getvalue()

    def flush(self):
        if self.path is not None:
            self.path.write_text(self.text())


def read_metrics(path: str | Path) -> tuple[dict, list[dict]]:
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        else:
            lines.append(line)
    return meta, list(csv.DictReader(lines))


@dataclass
class EvalResult:
    success_rate: float
    mean_length: float
    lengths: list[int] = field(default_factory=list)
    terminations: list[int] = field(default_factory=list)


def eval_seeds(seed: int, n: int) -> list[int]:
    """Fixed evaluation placements per run seed, disjoint from the training stream."""
    ss = np.random.SeedSequence([seed, 0xE7A1])
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in ss.spawn(n)]


def evaluate(policy, env: GraspEnv, seeds: list[int], mode: GraspSource, noise_std: float) -> EvalResult:
    """Run ``policy(obs_vector) -> env action`` once per seed; success is exactly TerminationCause.SUCCESS."""
    lengths, terms = [], []
    for s in seeds:
        obs, _, _ = start_episode(env, s, mode, noise_std)
        while True:
            res = env.step(policy(obs.vector()))
            obs = res.observation
            if res.done:
                break
        lengths.append(env.step_index)
        terms.append(int(res.termination))
    n = len(seeds)
    succ = sum(t == TerminationCause.SUCCESS for t in terms)
    return EvalResult(succ / n if n else 0.0, float(np.mean(lengths)) if n else 0.0, lengths, terms)


def agent_policy(agent: SacAgent, limits: np.ndarray):
    return lambda o: agent.act(o, deterministic=True) * limits


@dataclass
class TrainResult:
    agent: SacAgent
    metrics: MetricsWriter
    grad_passes: int
    episodes: int
    final_eval: EvalResult | None
    demo_samples_drawn: int = 0


def _check_finite(losses: Losses, agent: SacAgent, dump_dir: Path | None, t: int):
    vals = [losses.critic, losses.actor, losses.alpha_loss, losses.alpha]
    if all(math.isfinite(v) for v in vals):
        return
    msg = f"non-finite loss at env step {t}: critic={losses.critic} actor={losses.actor} alpha={losses.alpha}"
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
        (dump_dir / "diverged.json").write_text(json.dumps(
            {"env_steps": t, "grad_steps": agent.grad_steps, "critic_loss": repr(losses.critic),
             "actor_loss": repr(losses.actor), "alpha": repr(losses.alpha)}, indent=1))
        agent.save(dump_dir / "diverged.ckpt")
    raise TrainingDiverged(msg)


def train(algorithm: str, env: GraspEnv, config: SacConfig, seed: int, demos: DemoBuffer | None = None,
          mode: GraspSource = GraspSource.LATERAL, noise_std: float = 0.0,
          metrics_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          meta: dict | None = None, final_eval_episodes: int = 0,
          eval_env: GraspEnv | None = None) -> TrainResult:
    if algorithm not in ("gpayn", "sac", "oerld"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "oerld" and (demos is None or not len(demos)):
        raise MissingDemos("oerld needs a non-empty demo buffer")
    if algorithm == "gpayn" and demos is None:
        raise MissingDemos("gpayn needs a demo buffer (an empty one reduces to sac)")
    cfg = config
    limits = env.config.action_limits
    obs_dim = env.config.obs_dim
    agent_seed, episode_seed = (int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(2))
    agent = SacAgent(obs_dim, ACTION_DIM, cfg, seed=agent_seed, obs_scale=obs_scale(obs_dim))
    buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim, ACTION_DIM, cfg.demo_floor)
    demo_buf = None
    if algorithm == "gpayn":
        gpayn_init(buffer, demos, limits, env.config.config_hash())
    elif algorithm == "oerld":
        demo_buf = demo_sampler_buffer(demos, limits)
    eval_env = eval_env or GraspEnv(env.config, env.hand)
    ev_seeds = eval_seeds(seed, cfg.eval_episodes)
    dump_dir = Path(metrics_path).parent if metrics_path else None
    writer = MetricsWriter(metrics_path, {**(meta or {}), "seed": seed, "algorithm": algorithm})
    explore_rng = np.random.default_rng(agent_seed + 1)
    ep_stream = np.random.SeedSequence(episode_seed)

    def next_episode():
        s = int(ep_stream.spawn(1)[0].generate_state(1, dtype=np.uint64)[0])
        return start_episode(env, s, mode, noise_std)[0]

    last = Losses(float("nan"), float("nan"), float("nan"), agent.alpha)
    episodes = 0
    t = 0
    obs = next_episode() if cfg.total_timesteps else None
    ep_ret, ep_parts, ep_len = 0.0, np.zeros(4), 0
    while t < cfg.total_timesteps:
        o = obs.vector()
        if t < cfg.learning_starts:
            a = explore_rng.uniform(-1.0, 1.0, ACTION_DIM)
        else:
            a = agent.act(o)
        res = env.step(a * limits)
        t += 1
        agent.env_steps = t
        r = res.reward
        buffer.add(o, a, r.total, res.observation.vector(), int(res.termination) in TERMINAL_CODES)
        ep_ret += r.total
        ep_parts += (r.r_fingers, r.r_dist, r.r_height, r.r_end)
        ep_len += 1
        obs = res.observation

        if t % cfg.train_freq == 0 and t >= cfg.learning_starts and len(buffer) >= cfg.batch_size:
            for _ in range(cfg.gradient_steps):
                last = agent.update(buffer, demo_buf, cfg.bc_weight(t) if demo_buf is not None else 0.0)
                _check_finite(last, agent, dump_dir, t)

        if res.done:
            episodes += 1
            writer.add(kind="train", env_steps=t, episode=episodes,
                       success=res.termination is TerminationCause.SUCCESS, episode_length=ep_len,
                       episode_return=ep_ret, r_fingers=ep_parts[0], r_dist=ep_parts[1],
                       r_height=ep_parts[2], r_end=ep_parts[3], alpha=agent.alpha,
                       actor_loss=last.actor, critic_loss=last.critic)
            ep_ret, ep_parts, ep_len = 0.0, np.zeros(4), 0
            if t < cfg.total_timesteps:
                obs = next_episode()

        if cfg.eval_freq and t % cfg.eval_freq == 0 and cfg.eval_episodes:
            ev = evaluate(agent_policy(agent, limits), eval_env, ev_seeds, mode, noise_std)
            writer.add(kind="eval", env_steps=t, episode=episodes, alpha=agent.alpha,
                       actor_loss=last.actor, critic_loss=last.critic,
                       eval_success_rate=ev.success_rate, eval_mean_length=ev.mean_length)
            log.info("seed %d step %d eval success %.2f", seed, t, ev.success_rate)
            writer.flush()
        if checkpoint_path and cfg.checkpoint_freq and t % cfg.checkpoint_freq == 0:
            agent.save(checkpoint_path, {"meta": meta or {}, "seed": seed})

    final = None
    if final_eval_episodes and cfg.total_timesteps:
        final = evaluate(agent_policy(agent, limits), eval_env,
                         eval_seeds(seed + 1_000_003, final_eval_episodes), mode, noise_std)
        writer.add(kind="final", env_steps=t, episode=episodes, alpha=agent.alpha,
                   actor_loss=last.actor, critic_loss=last.critic,
                   eval_success_rate=final.success_rate, eval_mean_length=final.mean_length)
    writer.flush()
    if checkpoint_path:
        agent.save(checkpoint_path, {"meta": meta or {}, "seed": seed, "algorithm": algorithm})
    return TrainResult(agent, writer, agent.grad_steps, episodes, final,
                       demo_buf.samples_drawn if demo_buf is not None else 0)
