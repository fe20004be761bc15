"""Collect demos, train gpayn / sac / oerld on one cell, then merge the eval curves.

    python scripts/run_desk_compare.py [--config configs/desk_compare.json] [--algos gpayn,sac]
"""
import argparse
import json
import sys
from pathlib import Path

from gpayn.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv):
    code = main(argv)
    if code:
        sys.exit(code)


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--config", default=str(ROOT / "configs" / "desk_compare.json"))
    p.add_argument("--algos", default="gpayn,sac,oerld")
    p.add_argument("--out")
    args = p.parse_args()
    common = ["--config", args.config] + (["--out", args.out] if args.out else [])
    out = Path(args.out or json.loads(Path(args.config).read_text()).get("out_dir", "runs"))
    algos = args.algos.split(",")
    if not (out / "demos.bin").exists():
        run(["collect", *common])
    for algo in algos:
        run(["train", *common, "--algo", algo])
    run(["compare", *common, *[str(out / a) for a in algos]])
    for algo in algos:
        s = json.loads((out / algo / "summary.json").read_text())
        rates = [r["final_eval_success_rate"] for r in s["runs"]]
        print(f"{algo:6s} final success per seed {rates}")
