"""Command-line entry point: collect, train, eval, compare."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ALGORITHMS, ConfigError, ExperimentConfig
from .demos import ConfigHashMismatch, SchemaMismatch, collect_demos, load_demos, run_scripted_episode, save_demos
from .env import GraspEnv, start_episode
from .grasp_prior import GraspSource
from .reward import TerminationCause
from .sac import SacAgent
from .train import METRIC_COLUMNS, EvalResult, agent_policy, eval_seeds, evaluate, read_metrics, train

log = logging.getLogger("gpayn")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
DEMO_FILE = "demos.bin"
COMPARE_COLUMNS = ("method", "seed", "env_steps", "eval_success_rate")


class MissingDemoFile(ConfigError):
    pass


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("GPAYN_THREADS")
    try:
        limit = int(cap) if cap else 1
    except ValueError:
        raise ConfigError(f"GPAYN_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(limit, n_jobs))


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None


def build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.algo:
        cfg.algorithm = args.algo
    if args.object:
        cfg.env.object = args.object
    if args.grasp_mode:
        cfg.grasp_mode = args.grasp_mode
    if args.seeds:
        cfg.seeds = _parse_seeds(args.seeds)
    if args.seed is not None:
        cfg.seeds = [args.seed]
        cfg.demo_seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    # re-run validation on the overridden values
    return ExperimentConfig.from_dict(cfg.to_dict())


def _make_env(cfg: ExperimentConfig) -> GraspEnv:
    try:
        return GraspEnv(cfg.env)
    except KeyError as e:
        raise ConfigError(str(e)) from e


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- collect --------------------------------------------------------------------

def cmd_collect(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = _make_env(cfg)
    t0 = time.perf_counter()
    buf = collect_demos(env, cfg.demo_quota, cfg.demo_seed, cfg.mode, cfg.noise_std, cfg.literal_schedule)
    path = save_demos(buf, out / DEMO_FILE)
    cfg.dump(out / "collect_config.json")
    _write_json(out / "collect_timing.json", {"wall_clock_s": time.perf_counter() - t0})
    print(f"demonstrations pipeline success rate: {buf.success_rate:.3f} "
          f"({buf.success_count}/{buf.finished_episodes} episodes, {len(buf)} transitions) -> {path}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _demo_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.demo_file) if cfg.demo_file else Path(cfg.out_dir) / DEMO_FILE


def _train_one(cfg_dict: dict, seed: int, demo_path: str | None, force: bool) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    env = _make_env(cfg)
    demos = load_demos(demo_path, env.config.config_hash(), force) if demo_path else None
    run_dir = Path(cfg.out_dir) / cfg.algorithm / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.config_hash(), "env_config_hash": env.config.config_hash(),
            "object": cfg.env.object, "grasp_mode": cfg.grasp_mode}
    t0 = time.perf_counter()
    res = train(cfg.algorithm, env, cfg.sac, seed, demos, cfg.mode, cfg.noise_std,
                metrics_path=run_dir / "metrics.csv", checkpoint_path=run_dir / "checkpoint.ckpt",
                meta=meta, final_eval_episodes=cfg.final_eval_episodes)
    _write_json(run_dir / "timing.json", {"wall_clock_s": time.perf_counter() - t0})
    return {"seed": seed, "final_eval_success_rate": res.final_eval.success_rate if res.final_eval else None,
            "final_eval_mean_length": res.final_eval.mean_length if res.final_eval else None,
            "grad_passes": res.grad_passes, "episodes": res.episodes,
            "metrics": str(run_dir / "metrics.csv"), "checkpoint": str(run_dir / "checkpoint.ckpt")}


def cmd_train(cfg: ExperimentConfig, args) -> int:
    demo_path = None
    if cfg.algorithm in ("gpayn", "oerld"):
        p = _demo_path(cfg)
        if not p.exists():
            raise MissingDemoFile(f"{cfg.algorithm} needs demonstrations; run `gpayn collect` first (looked for {p})")
        demo_path = str(p)
        demos = load_demos(p, _make_env(cfg).config.config_hash(), args.force)
        demo_rate = demos.success_rate
    else:
        demo_rate = None
    out = Path(cfg.out_dir) / cfg.algorithm
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    t0 = time.perf_counter()
    jobs = [(cfg.to_dict(), s, demo_path, args.force) for s in cfg.seeds]
    workers = worker_count(len(jobs))
    if workers == 1:
        runs = [_train_one(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_train_one, *zip(*jobs)))
    summary = {"algorithm": cfg.algorithm, "config_hash": cfg.config_hash(), "object": cfg.env.object,
               "grasp_mode": cfg.grasp_mode, "demo_pipeline_success_rate": demo_rate, "runs": runs}
    _write_json(out / "summary.json", summary)
    _write_json(out / "summary_timing.json", {"wall_clock_s": time.perf_counter() - t0})
    for r in runs:
        print(f"{cfg.algorithm} seed {r['seed']}: final eval success {r['final_eval_success_rate']}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def scripted_eval(env: GraspEnv, seeds: list[int], mode: GraspSource, noise_std: float,
                  literal_schedule: bool = False) -> EvalResult:
    lengths, terms = [], []
    for s in seeds:
        _, plan, _ = start_episode(env, s, mode, noise_std)
        rec = run_scripted_episode(env, plan, literal_schedule=literal_schedule)
        lengths.append(rec.length)
        terms.append(int(rec.termination))
    succ = sum(t == TerminationCause.SUCCESS for t in terms)
    return EvalResult(succ / len(seeds), float(np.mean(lengths)), lengths, terms)


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    env = _make_env(cfg)
    seed = cfg.seeds[0]
    seeds = eval_seeds(seed + 7_919, args.episodes)  # fresh placements, not the training eval set
    if args.scripted:
        res = scripted_eval(env, seeds, cfg.mode, cfg.noise_std, cfg.literal_schedule)
        label = "scripted"
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint PATH (or --scripted)")
        agent = SacAgent.load(args.checkpoint)
        if agent.obs_dim != env.config.obs_dim:
            raise ConfigError("checkpoint observation size does not match the env config")
        res = evaluate(agent_policy(agent, env.config.action_limits), env, seeds, cfg.mode, cfg.noise_std)
        label = str(args.checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval.json", {"policy": label, "seed": seed, "config_hash": cfg.config_hash(),
                                    "episodes": args.episodes, "success_rate": res.success_rate,
                                    "mean_episode_length": res.mean_length})
    print(f"success rate {res.success_rate:.3f} over {args.episodes} episodes, "
          f"mean episode length {res.mean_length:.1f}")
    return EXIT_OK


# -- compare --------------------------------------------------------------------

def _metrics_files(paths: list[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(p.rglob("metrics.csv"))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"no such run: {p}")
    if not files:
        raise ConfigError("compare found no metrics.csv files")
    return files


def merge_curves(files: list[Path]) -> tuple[dict, list[list]]:
    """Eval curves from several runs on one env config, aligned on env_steps."""
    cell, rows = None, []
    for f in files:
        meta, recs = read_metrics(f)
        key = {"env_config_hash": meta.get("env_config_hash"), "object": meta.get("object"),
               "grasp_mode": meta.get("grasp_mode")}
        if cell is None:
            cell = key
        elif key != cell:
            raise ConfigError(f"{f}: env config {key} does not match {cell}")
        for r in recs:
            if r["kind"] == "eval":
                rows.append([meta.get("algorithm", "?"), int(meta.get("seed", -1)), int(r["env_steps"]),
                             float(r["eval_success_rate"])])
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    return cell, rows


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    cell, rows = merge_curves(_metrics_files(args.runs))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"compare_{cell['object']}_{cell['grasp_mode']}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# env_config_hash={cell['env_config_hash']}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        w.writerows([[m, s, t, repr(v)] for m, s, t, v in rows])
    series = sorted({(r[0], r[1]) for r in rows})
    print(f"{len(series)} curve series -> {path}")
    return EXIT_OK


# -- entry ----------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int)
    common.add_argument("--seeds", metavar="a,b,c")
    common.add_argument("--algo", choices=ALGORITHMS)
    common.add_argument("--object", metavar="ID")
    common.add_argument("--grasp-mode", choices=[m.value for m in GraspSource])
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--force", action="store_true", help="accept demos collected under another env config")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gpayn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="run the scripted pipeline and store demonstrations")
    sub.add_parser("train", parents=[common], help="train gpayn / sac / oerld for every seed")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or the scripted policy")
    ev.add_argument("--checkpoint", metavar="PATH")
    ev.add_argument("--episodes", type=int, default=200)
    ev.add_argument("--scripted", action="store_true")
    cmp_ = sub.add_parser("compare", parents=[common], help="merge eval curves into one CSV per cell")
    cmp_.add_argument("runs", nargs="+", help="run directories or metrics.csv files")
    return p


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        worker_count(1)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ConfigHashMismatch, SchemaMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
