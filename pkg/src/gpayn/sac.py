"""Soft actor-critic with twin critics and automatic temperature, plus a BC-augmented actor loss."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .buffer import Batch, BufferTooSmall, ReplayBuffer
from .nn import Adam, Mlp, polyak

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
CKPT_MAGIC = b"GPAYNCK1"
CKPT_VERSION = 1


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    entropy_target: float = -15.0
    train_freq: int = 10
    gradient_steps: int = 1
    target_update_interval: int = 1
    total_timesteps: int = 100_000
    learning_starts: int = 0
    hidden: int = 128
    lr: float = 3e-4
    init_log_alpha: float = 0.0
    reward_scale: float = 1.0
    buffer_capacity: int = 1_000_000
    demo_floor: int = 0
    bc_lambda: float = 1.0
    bc_decay_steps: int = 0  # 0 keeps bc_lambda constant; else linear decay to 0
    demo_batch_size: int = 32
    eval_freq: int = 2000
    eval_episodes: int = 20
    checkpoint_freq: int = 0

    def __post_init__(self):
        for name in ("batch_size", "train_freq", "gradient_steps", "target_update_interval", "hidden",
                     "buffer_capacity", "demo_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("total_timesteps", "learning_starts", "eval_freq", "eval_episodes",
                     "checkpoint_freq", "bc_decay_steps", "demo_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.tau <= 1.0 or self.lr <= 0:
            raise ValueError("gamma and tau must be in (0, 1], lr positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SacConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sac config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def bc_weight(self, env_steps: int) -> float:
        if not self.bc_decay_steps:
            return self.bc_lambda
        return self.bc_lambda * max(0.0, 1.0 - env_steps / self.bc_decay_steps)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), written to stay finite for large |u|."""
    return 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))


def tanh_gaussian_log_prob(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log density of a = tanh(u), u ~ N(mu, exp(log_std)^2), summed over the last axis."""
    z = (u - mu) / np.exp(log_std)
    return (-0.5 * z * z - log_std - _HALF_LOG_2PI - squash_correction(u)).sum(axis=-1)


@dataclass
class Losses:
    critic: float
    actor: float
    alpha_loss: float
    alpha: float
    bc: float = 0.0


class SacAgent:
    def __init__(self, obs_dim: int, action_dim: int, config: SacConfig | None = None, seed: int = 0,
                 obs_scale: np.ndarray | None = None):
        self.config = config or SacConfig()
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, dtype=np.float64)
        if self.obs_scale.shape != (obs_dim,):
            raise ValueError("obs_scale must match obs_dim")
        init_rng, self_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        self.rng = self_rng
        h = self.config.hidden
        self.actor = Mlp.init([obs_dim, h, h, 2 * action_dim], init_rng)
        self.q1 = Mlp.init([obs_dim + action_dim, h, h, 1], init_rng)
        self.q2 = Mlp.init([obs_dim + action_dim, h, h, 1], init_rng)
        self.q1_target, self.q2_target = self.q1.copy(), self.q2.copy()
        self.log_alpha = np.array([self.config.init_log_alpha])
        lr = self.config.lr
        self.actor_opt = Adam(self.actor.params(), lr)
        self.critic_opt = Adam(self.critic_params(), lr)
        self.alpha_opt = Adam([self.log_alpha], lr)
        self.grad_steps = 0
        self.env_steps = 0

    # -- policy ----------------------------------------------------------------

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def critic_params(self) -> list[np.ndarray]:
        return self.q1.params() + self.q2.params()

    def scale(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64) * self.obs_scale

    def _dist(self, obs: np.ndarray):
        out, cache = self.actor.forward_cache(self.scale(obs))
        mu, raw = out[:, :self.action_dim], out[:, self.action_dim:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        inside = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
        return mu, log_std, inside, cache

    def sample(self, obs: np.ndarray, xi: np.ndarray):
        """Reparameterized actions tanh(mu + std*xi) and their log-probs for a batch."""
        mu, log_std, _, _ = self._dist(np.atleast_2d(obs))
        u = mu + np.exp(log_std) * xi
        return np.tanh(u), tanh_gaussian_log_prob(u, mu, log_std)

    def act(self, obs: np.ndarray, deterministic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """Normalized action in (-1, 1)^A for one observation."""
        mu, log_std, _, _ = self._dist(np.atleast_2d(obs))
        if deterministic:
            return np.tanh(mu[0])
        rng = rng or self.rng
        return np.tanh(mu[0] + np.exp(log_std[0]) * rng.standard_normal(self.action_dim))

    # -- losses and gradients --------------------------------------------------

    def _q_input(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.concatenate([self.scale(obs), actions], axis=1)

    def critic_target(self, batch: Batch, xi_next: np.ndarray, alpha: float) -> np.ndarray:
        a2, logp2 = self.sample(batch.next_obs, xi_next)
        x2 = self._q_input(batch.next_obs, a2)
        q_next = np.minimum(self.q1_target(x2), self.q2_target(x2))[:, 0]
        return self.config.reward_scale * batch.rewards + self.config.gamma * (1.0 - batch.done) * (q_next - alpha * logp2)

    def critic_loss_and_grads(self, batch: Batch, target: np.ndarray):
        """0.5 * (MSE(q1, y) + MSE(q2, y)) and gradients over q1 then q2 params."""
        x = self._q_input(batch.obs, batch.actions)
        n = len(batch)
        loss, grads = 0.0, []
        for q in (self.q1, self.q2):
            out, cache = q.forward_cache(x)
            err = out[:, 0] - target
            loss += 0.5 * float(np.mean(err * err))
            g, _ = q.backward(cache, (err / n)[:, None])
            grads += g
        return loss, grads

    def actor_loss_and_grads(self, obs: np.ndarray, xi: np.ndarray, alpha: float,
                             demo_obs: np.ndarray | None = None, demo_actions: np.ndarray | None = None,
                             bc_lambda: float = 0.0):
        """mean(alpha*logp - min Q) [+ bc_lambda * MSE(tanh(mu_demo), a_demo)] and its gradients."""
        n = len(obs)
        mu, log_std, inside, cache = self._dist(obs)
        std = np.exp(log_std)
        u = mu + std * xi
        a = np.tanh(u)
        logp = tanh_gaussian_log_prob(u, mu, log_std)

        x = self._q_input(obs, a)
        o1, c1 = self.q1.forward_cache(x)
        o2, c2 = self.q2.forward_cache(x)
        use1 = o1[:, 0] <= o2[:, 0]
        q_min = np.where(use1, o1[:, 0], o2[:, 0])
        loss = float(np.mean(alpha * logp - q_min))

        # d(-q_min)/da through whichever critic is the minimum
        w1 = use1.astype(np.float64)
        _, dx1 = self.q1.backward(c1, (-w1 / n)[:, None])
        _, dx2 = self.q2.backward(c2, (-(1.0 - w1) / n)[:, None])
        dL_da = (dx1 + dx2)[:, self.obs_dim:]
        dL_du = alpha * 2.0 * a / n + dL_da * (1.0 - a * a)  # d logp / du = 2 tanh(u)
        d_mu = dL_du
        d_ls = (-alpha / n + dL_du * std * xi) * inside
        grads, _ = self.actor.backward(cache, np.concatenate([d_mu, d_ls], axis=1))

        bc = 0.0
        if demo_obs is not None and bc_lambda:
            mu_d, _, _, cache_d = self._dist(demo_obs)
            t = np.tanh(mu_d)
            diff = t - demo_actions
            bc = float(np.mean(diff * diff))
            loss += bc_lambda * bc
            d_mu_d = bc_lambda * 2.0 * diff * (1.0 - t * t) / diff.size
            g_bc, _ = self.actor.backward(cache_d, np.concatenate([d_mu_d, np.zeros_like(d_mu_d)], axis=1))
            grads = [g + h for g, h in zip(grads, g_bc)]
        return loss, grads, logp, bc

    def alpha_loss_and_grad(self, logp: np.ndarray):
        """-log_alpha * mean(logp + target); stationary when mean(-logp) equals the target entropy."""
        m = float(np.mean(logp + self.config.entropy_target))
        return -float(self.log_alpha[0]) * m, np.array([-m])

    # -- updates ---------------------------------------------------------------

    def update(self, buffer: ReplayBuffer, demo_buffer: ReplayBuffer | None = None,
               bc_lambda: float = 0.0) -> Losses:
        """One gradient pass. With ``demo_buffer`` the actor also gets the BC term."""
        cfg = self.config
        if len(buffer) < cfg.batch_size:
            raise BufferTooSmall(f"buffer holds {len(buffer)} transitions, batch needs {cfg.batch_size}")
        batch = buffer.sample(cfg.batch_size, self.rng)
        demo = None
        if demo_buffer is not None:
            demo = demo_buffer.sample(cfg.demo_batch_size, self.rng)
        xi = self.rng.standard_normal((cfg.batch_size, self.action_dim))
        xi_next = self.rng.standard_normal((cfg.batch_size, self.action_dim))

        alpha = self.alpha  # value before this pass's temperature step, used by both losses
        _, logp = self.sample(batch.obs, xi)
        alpha_loss, g_alpha = self.alpha_loss_and_grad(logp)
        self.alpha_opt.step([self.log_alpha], [g_alpha])

        target = self.critic_target(batch, xi_next, alpha)
        critic_loss, g_critic = self.critic_loss_and_grads(batch, target)
        self.critic_opt.step(self.critic_params(), g_critic)

        actor_loss, g_actor, _, bc = self.actor_loss_and_grads(
            batch.obs, xi, alpha,
            demo.obs if demo is not None else None,
            demo.actions if demo is not None else None, bc_lambda)
        self.actor_opt.step(self.actor.params(), g_actor)

        self.grad_steps += 1
        if self.grad_steps % cfg.target_update_interval == 0:
            polyak(self.q1_target, self.q1, cfg.tau)
            polyak(self.q2_target, self.q2, cfg.tau)
        return Losses(critic_loss, actor_loss, alpha_loss, alpha, bc)

    # -- checkpoint ------------------------------------------------------------

    def _named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for net_name in ("actor", "q1", "q2", "q1_target", "q2_target"):
            for i, p in enumerate(getattr(self, net_name).params()):
                out.append((f"{net_name}.{i}", p))
        out.append(("log_alpha", self.log_alpha))
        for opt_name in ("actor_opt", "critic_opt", "alpha_opt"):
            for i, s in enumerate(getattr(self, opt_name).state()):
                out.append((f"{opt_name}.{i}", s))
        out.append(("obs_scale", self.obs_scale))
        return out

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        """Versioned binary: magic, u32 version, u32 meta length, JSON meta, raw <f8 arrays."""
        arrays = self._named_arrays()
        meta = {
            "version": CKPT_VERSION,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "config": self.config.to_dict(),
            "grad_steps": self.grad_steps,
            "env_steps": self.env_steps,
            "adam_steps": [self.actor_opt.t, self.critic_opt.t, self.alpha_opt.t],
            "rng": self.rng.bit_generator.state,
            "arrays": [[name, list(a.shape)] for name, a in arrays],
            "extra": extra or {},
        }
        head = json.dumps(meta, sort_keys=True).encode()
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(struct.pack("<II", CKPT_VERSION, len(head)))
            fh.write(head)
            for _, a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "SacAgent":
        data = Path(path).read_bytes()
        if data[:8] != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<II", data[8:16])
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version} unsupported")
        meta = json.loads(data[16:16 + hlen].decode())
        agent = cls(meta["obs_dim"], meta["action_dim"], SacConfig.from_dict(meta["config"]))
        agent.grad_steps, agent.env_steps = meta["grad_steps"], meta["env_steps"]
        agent.actor_opt.t, agent.critic_opt.t, agent.alpha_opt.t = meta["adam_steps"]
        agent.rng.bit_generator.state = meta["rng"]
        agent.extra = meta["extra"]
        targets = dict(agent._named_arrays())
        off = 16 + hlen
        for name, shape in meta["arrays"]:
            n = int(np.prod(shape)) * 8
            arr = np.frombuffer(data[off:off + n], dtype="<f8").reshape(shape)
            targets[name][...] = arr
            off += n
        if off != len(data):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
        return agent
