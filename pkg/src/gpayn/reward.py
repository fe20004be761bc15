"""Shaped grasping reward: finger contacts, planar approach, lift height, episode end.

Units are fixed at this boundary: planar distance ``d`` in centimetres, object
height ``h`` in millimetres.  Gates are evaluated after the contact update of
the current transition, so ``f(t+1)`` counts towards "at least one timestep".
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace


class TerminationCause(enum.IntEnum):
    RUNNING = 0
    SUCCESS = 1
    OBJECT_DISPLACED = 2
    IK_INFEASIBLE = 3
    TIMEOUT = 4

    @property
    def done(self) -> bool:
        return self is not TerminationCause.RUNNING


class HistoryEpisodeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StepInfo:
    """Scalar quantities the reward and termination logic read after a step."""

    f_count: int
    d_cm: float
    h_mm: float
    step_index: int
    episode_id: int = 0
    ever_two_contacts: bool = False
    attached: bool = False
    displacement: float = 0.0
    ik_failed: bool = False


@dataclass(frozen=True)
class RewardHistory:
    episode_id: int
    ever_two_contacts: bool = False
    prev_f: int = 0
    prev_d_cm: float = 0.0
    prev_h_mm: float = 0.0

    @classmethod
    def start(cls, info: StepInfo) -> "RewardHistory":
        return cls(info.episode_id, info.f_count >= 2, info.f_count, info.d_cm, info.h_mm)


@dataclass(frozen=True)
class RewardBreakdown:
    r_fingers: float = 0.0
    r_dist: float = 0.0
    r_height: float = 0.0
    r_end: float = 0.0

    @property
    def total(self) -> float:
        return self.r_fingers + self.r_dist + self.r_height + self.r_end

    def as_row(self) -> list[float]:
        return [self.r_fingers, self.r_dist, self.r_height, self.r_end, self.total]


def r_fingers(f_prev: int, f_next: int) -> float:
    return float(f_next - f_prev)


def r_dist(d_prev_cm: float, d_next_cm: float, history: RewardHistory,
           f_next: int = 0, sign: float = -1.0) -> float:
    """Approach term. ``sign=-1`` rewards decreasing distance; ``sign=+1`` is d(t+1) - d(t) verbatim."""
    if history.ever_two_contacts or f_next >= 2:
        return 0.0
    return sign * (d_next_cm - d_prev_cm)


def r_height(f_next: int, dh_mm: float, history: RewardHistory) -> float:
    ever_two = history.ever_two_contacts or f_next >= 2
    if (f_next >= 2 and dh_mm > 0) or (ever_two and dh_mm < 0):
        return f_next * dh_mm
    return 0.0


def r_end(termination: TerminationCause) -> float:
    if termination is TerminationCause.RUNNING:
        return 0.0
    return 1.0 if termination is TerminationCause.SUCCESS else -1.0


def compute(prev_info: StepInfo, next_info: StepInfo, termination: TerminationCause,
            history: RewardHistory, dist_sign: float = -1.0) -> tuple[RewardBreakdown, RewardHistory]:
    if history.episode_id != next_info.episode_id or prev_info.episode_id != next_info.episode_id:
        raise HistoryEpisodeMismatch(
            f"history for episode {history.episode_id}, infos for "
            f"{prev_info.episode_id}->{next_info.episode_id}")
    f0, f1 = prev_info.f_count, next_info.f_count
    out = RewardBreakdown(
        r_fingers=r_fingers(f0, f1),
        r_dist=r_dist(prev_info.d_cm, next_info.d_cm, history, f1, dist_sign),
        r_height=r_height(f1, next_info.h_mm - prev_info.h_mm, history),
        r_end=r_end(termination),
    )
    new_hist = replace(history, ever_two_contacts=history.ever_two_contacts or f1 >= 2,
                       prev_f=f1, prev_d_cm=next_info.d_cm, prev_h_mm=next_info.h_mm)
    return out, new_hist
