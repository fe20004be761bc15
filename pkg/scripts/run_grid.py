"""Train every (object, grasp mode) cell for the chosen algorithms.

Each cell gets its own directory with its own demos, since the demo buffer is
tied to the env config.  GPAYN_THREADS parallelizes seeds inside a cell.

    python scripts/run_grid.py --objects sugar_box,mustard_bottle --modes lateral,topdown --out runs/grid
"""
import argparse
import sys
from pathlib import Path

from gpayn.cli import main
from gpayn.objects import OBJECTS

if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--config")
    p.add_argument("--objects", default=",".join(sorted(OBJECTS)))
    p.add_argument("--modes", default="lateral,topdown")
    p.add_argument("--algos", default="gpayn,sac,oerld")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", default="runs/grid")
    args = p.parse_args()
    base = ["--config", args.config] if args.config else []
    for obj in args.objects.split(","):
        for mode in args.modes.split(","):
            cell = Path(args.out) / f"{obj}_{mode}"
            common = [*base, "--object", obj, "--grasp-mode", mode, "--out", str(cell)]
            steps = [["collect", *common]]
            steps += [["train", *common, "--algo", a, "--seeds", args.seeds] for a in args.algos.split(",")]
            steps += [["compare", *common, str(cell)]]
            for argv in steps:
                code = main(argv)
                if code:
                    print(f"{obj}/{mode}: {argv[0]} exited {code}", file=sys.stderr)
                    break
