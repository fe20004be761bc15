"""Experiment configuration: one JSON document covering env, learner and demo knobs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .env import EnvConfig
from .grasp_prior import GraspSource
from .sac import SacConfig

ALGORITHMS = ("gpayn", "sac", "oerld")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algorithm: str = "gpayn"
    grasp_mode: str = "lateral"
    noise_std: float = 0.005
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    demo_quota: int = 20_000
    demo_seed: int = 0
    demo_file: str | None = None
    literal_schedule: bool = False
    final_eval_episodes: int = 50
    out_dir: str = "runs"
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SacConfig = field(default_factory=SacConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.grasp_mode not in {m.value for m in GraspSource}:
            raise ConfigError(f"grasp_mode must be lateral or topdown, got {self.grasp_mode!r}")
        if self.noise_std < 0 or self.demo_quota < 0 or self.final_eval_episodes < 0:
            raise ConfigError("noise_std, demo_quota and final_eval_episodes must be non-negative")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        self.seeds = [int(s) for s in self.seeds]

    @property
    def mode(self) -> GraspSource:
        return GraspSource(self.grasp_mode)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            env = EnvConfig.from_dict(d.pop("env", {}))
            sac = SacConfig.from_dict(d.pop("sac", {}))
            return cls(env=env, sac=sac, **d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["env"] = self.env.to_dict()
        d["sac"] = self.sac.to_dict()
        return d

    def dump(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    def config_hash(self) -> str:
        """Hash of everything that shapes results; seeds and output paths are left out."""
        d = self.to_dict()
        for k in ("seeds", "out_dir", "demo_file"):
            d.pop(k)
        d["env"].pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
