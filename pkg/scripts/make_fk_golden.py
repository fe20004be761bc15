"""Freeze fingertip positions from an independent symbolic FK (sympy) into tests/data/fk_golden.json.

Reads the hand JSON directly and never imports gpayn.hand.
"""
import json
from pathlib import Path

import numpy as np
import sympy as sp

ROOT = Path(__file__).resolve().parents[1]
HAND = ROOT / "src" / "gpayn" / "data" / "hand_v1.json"
OUT = ROOT / "tests" / "data" / "fk_golden.json"


def rot(axis, angle):
    k = sp.Matrix(axis) / sp.sqrt(sum(sp.Integer(0) + a * a for a in sp.Matrix(axis)))
    K = sp.Matrix([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return sp.eye(3) + sp.sin(angle) * K + (1 - sp.cos(angle)) * K * K


def main():
    doc = json.loads(HAND.read_text())
    q = sp.symbols("q0:9")
    tips = []
    for f in doc["fingers"]:
        R = sp.eye(3)
        p = sp.Matrix([sp.nsimplify(v) for v in f["mount"]])
        for j in f["joints"]:
            ratio = sp.nsimplify(j.get("ratio", 1.0))
            R = R * rot([sp.nsimplify(v) for v in j["axis"]], ratio * q[j["actuator"]])
            p = p + R * sp.Matrix([sp.nsimplify(v) for v in j["link"]])
        tips.append(p)
    fn = sp.lambdify(q, sp.Matrix.hstack(*tips).T, "mpmath")

    rng = np.random.default_rng(20240601)
    lo = np.array([a["limits"][0] for a in doc["actuators"]])
    hi = np.array([a["limits"][1] for a in doc["actuators"]])
    cases = [[a["open"] for a in doc["actuators"]], [a["close"] for a in doc["actuators"]]]
    cases += rng.uniform(lo, hi, (8, 9)).tolist()
    out = []
    for qv in cases:
        m = fn(*[sp.Float(v, 30) for v in qv])
        out.append({"qpos": qv, "tips": [[float(m[i, k]) for k in range(3)] for i in range(m.rows)]})
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"source": "sympy symbolic chain", "cases": out}, indent=1))
    print(f"wrote {len(out)} cases to {OUT}")


if __name__ == "__main__":
    main()
