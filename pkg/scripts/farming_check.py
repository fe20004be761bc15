"""Compare a scripted clean lift against a scripted lift/drop/re-grasp loop.

Both start from the scripted approach and close.  The drop transition loses
every contact at once, so the height term charges nothing for it, and each
re-lift is paid again.  Prints termination, cycles and returns for both.

    python scripts/farming_check.py [--seed 5] [--cap-mm 90]
"""
import argparse

import numpy as np

from gpayn.demos import APPROACH_STEPS, CLOSE_STEPS, PhaseState, scripted_action
from gpayn.env import Action, EnvConfig, GraspEnv, start_episode
from gpayn.grasp_prior import GraspSource


def _act(pos=(0.0, 0.0, 0.0), fingers=0.0):
    return Action(np.array(pos, float), np.zeros(3), np.full(9, fingers))


def run(farm: bool, seed: int, cap_mm: float, gamma: float = 0.99):
    env = GraspEnv(EnvConfig())
    _, plan, _ = start_episode(env, seed, GraspSource.LATERAL, 0.0)
    phase = PhaseState()
    while env.step_index < APPROACH_STEPS + CLOSE_STEPS:
        res = env.step(scripted_action(env.step_index, env.hand_state, plan, env.hand, phase))
    z0 = env.hand_state.eef_pose.position[2]
    q_closed = env.hand_state.qpos.copy()
    rewards, cycles, state = [], 0, "lift"
    while not res.done:
        if state == "lift":
            if farm and env.info.h_mm >= cap_mm:
                state = "open"
                continue
            res = env.step(_act((0, 0, 0.01)))
        elif state == "open":
            res = env.step(_act(fingers=-0.1))
            if env.info.f_count == 0 and not env.object_state.attached:
                state, cycles = "down", cycles + 1
        elif state == "down":
            dz = env.hand_state.eef_pose.position[2] - z0
            if dz <= 1e-9:
                state = "close"
                continue
            res = env.step(_act((0, 0, -min(0.01, dz))))
        else:
            dq = np.clip(q_closed - env.hand_state.qpos, -0.1, 0.1)
            if np.abs(dq).max() < 1e-6 or (env.object_state.attached and env.info.f_count >= 3):
                state = "lift"
                continue
            res = env.step(Action(np.zeros(3), np.zeros(3), dq))
        rewards.append(res.reward.total)
    disc = sum(r * gamma ** i for i, r in enumerate(rewards))
    return res.termination.name, env.step_index, cycles, sum(rewards), disc


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--cap-mm", type=float, default=90.0)
    args = p.parse_args()
    for label, farm in (("clean lift", False), ("lift/drop loop", True)):
        term, steps, cycles, ret, disc = run(farm, args.seed, args.cap_mm)
        print(f"{label:15s} {term:16s} steps {steps:5d} drops {cycles:3d} "
              f"return after close {ret:8.1f} discounted {disc:7.1f}")
