"""Grasp-pose prior: synthetic oracle candidates, gripper-to-hand transform, pre-grasp retreat.

Hand-frame convention used everywhere: +x is the approach axis (palm towards
object), +y runs from thumb to fingers, +z completes the right-handed frame.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Pose, quat_from_axis_angle, quat_mul
from .objects import ObjectModel

PRE_GRASP_DISTANCE = 0.05  # m
GRASP_REACH = 0.105  # palm origin to object centroid along the approach axis, m
TOP_CLEARANCE = 0.03  # palm above the object top for top-down grasps, m
MAX_GRASP_WIDTH = 0.07  # widest object section the open hand straddles, m
HAND_ROLL_OFFSET = np.pi / 4  # gripper closing axis vs hand thumb-finger axis


class GraspSource(enum.Enum):
    LATERAL = "lateral"  # superquadric-style: horizontal approach, centroid reference
    TOP_DOWN = "topdown"  # VGN-style: vertical approach, point-cloud median reference


class NoReachableCandidate(RuntimeError):
    pass


@dataclass
class GraspCandidate:
    pose: Pose
    confidence: float
    source: GraspSource

    @property
    def approach_dir(self) -> np.ndarray:
        return self.pose.rotation[:, 0].copy()


@dataclass
class GraspPlan:
    grasp_pose: Pose
    pre_grasp_pose: Pose
    object_ref_point: np.ndarray
    approach_dir: np.ndarray

    def to_record(self) -> str:
        return json.dumps({
            "grasp_position": self.grasp_pose.position.tolist(),
            "grasp_quaternion": self.grasp_pose.orientation.tolist(),
            "pre_grasp_position": self.pre_grasp_pose.position.tolist(),
            "object_ref_point": np.asarray(self.object_ref_point).tolist(),
            "approach_dir": np.asarray(self.approach_dir).tolist(),
        }, sort_keys=True)

    @classmethod
    def from_record(cls, text: str) -> "GraspPlan":
        d = json.loads(text)
        q = np.array(d["grasp_quaternion"])
        return cls(Pose(d["grasp_position"], q), Pose(d["pre_grasp_position"], q),
                   np.array(d["object_ref_point"]), np.array(d["approach_dir"]))


def _frame(x_axis: np.ndarray, y_axis: np.ndarray) -> np.ndarray:
    x = x_axis / np.linalg.norm(x_axis)
    y = y_axis - (y_axis @ x) * x
    y = y / np.linalg.norm(y)
    return np.column_stack([x, y, np.cross(x, y)])


def _perturb(pose: Pose, noise_std: float, rng: np.random.Generator) -> Pose:
    dp = rng.normal(0.0, 1.0, 3) * noise_std
    rotvec = rng.normal(0.0, 1.0, 3) * noise_std
    angle = float(np.linalg.norm(rotvec))
    q = pose.orientation
    if angle > 0.0:
        q = quat_mul(quat_from_axis_angle(rotvec, angle), q)
    return Pose(pose.position + dp, q)


def _lateral_frames(model: ObjectModel, obj_pose: Pose) -> list[np.ndarray]:
    up = np.array([0.0, 0.0, 1.0])
    rot = obj_pose.rotation
    frames = []
    if model.shape == "box":
        hx, hy = model.horizontal_half_extents()
        for axis, half_other in ((0, hy), (1, hx)):
            if 2 * half_other > MAX_GRASP_WIDTH:
                continue
            for sgn in (1.0, -1.0):
                approach = -sgn * rot[:, axis]
                approach = approach - (approach @ up) * up
                frames.append(_frame(approach, np.cross(up, approach)))
    else:
        for k in range(8):
            th = k * np.pi / 4
            approach = np.array([np.cos(th), np.sin(th), 0.0])
            frames.append(_frame(approach, np.cross(up, approach)))
    return frames


def _top_down_frames(model: ObjectModel, obj_pose: Pose) -> list[np.ndarray]:
    down = np.array([0.0, 0.0, -1.0])
    rot = obj_pose.rotation
    frames = []
    if model.shape == "box":
        hx, hy = model.horizontal_half_extents()
        for axis, half in ((0, hx), (1, hy)):
            if 2 * half > MAX_GRASP_WIDTH:
                continue
            for sgn in (1.0, -1.0):
                frames.append(_frame(down, sgn * rot[:, axis]))
    else:
        for k in range(4):
            th = k * np.pi / 4
            frames.append(_frame(down, np.array([np.cos(th), np.sin(th), 0.0])))
    return frames


def oracle_grasps(model: ObjectModel, obj_pose: Pose, mode: GraspSource,
                  noise_std: float, rng: np.random.Generator) -> list[GraspCandidate]:
    """Ground-truth grasp candidates plus Gaussian noise, sorted by confidence.

    Top-down candidates come out in gripper convention (closing axis rolled by
    -45 deg); pass them through :func:`vgn_to_hand` before execution.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    centroid = obj_pose.position
    cands = []
    if mode is GraspSource.LATERAL:
        for R in _lateral_frames(model, obj_pose):
            pose = Pose.from_matrix(centroid - GRASP_REACH * R[:, 0], R)
            cands.append(pose)
    else:
        top = centroid[2] + 0.5 * model.height
        z = max(centroid[2] + GRASP_REACH, top + TOP_CLEARANCE)
        for R in _top_down_frames(model, obj_pose):
            hand = Pose.from_matrix([centroid[0], centroid[1], z], R)
            cands.append(vgn_to_hand(hand, sign=-1.0))
    out = []
    for pose in cands:
        pose = _perturb(pose, noise_std, rng) if noise_std > 0 else pose
        out.append(GraspCandidate(pose, float(rng.uniform()), mode))
    out.sort(key=lambda c: -c.confidence)
    return out


def vgn_to_hand(gripper_pose: Pose, sign: float = 1.0, angle: float = HAND_ROLL_OFFSET,
                approach_axis=(1.0, 0.0, 0.0)) -> Pose:
    """Roll a parallel-gripper grasp about its own approach axis (local frame)."""
    q_roll = quat_from_axis_angle(approach_axis, sign * angle)
    return Pose(gripper_pose.position.copy(), quat_mul(gripper_pose.orientation, q_roll))


def pre_grasp(grasp_pose: Pose, approach_dir, distance: float = PRE_GRASP_DISTANCE) -> Pose:
    approach_dir = np.asarray(approach_dir, dtype=float)
    return Pose(grasp_pose.position - distance * approach_dir, grasp_pose.orientation.copy())


def object_reference_point(model: ObjectModel, obj_pose: Pose, mode: GraspSource) -> np.ndarray:
    if mode is GraspSource.LATERAL:
        return obj_pose.position.copy()
    world = model.surface_samples @ obj_pose.rotation.T + obj_pose.position
    return np.median(world, axis=0)


WorkspaceCheck = Callable[[Pose, np.ndarray], bool]


def select_reachable(candidates: Sequence[GraspCandidate], workspace_check: WorkspaceCheck,
                     ref_point: np.ndarray | None = None) -> GraspPlan:
    for c in candidates:
        approach = c.approach_dir
        pgp = pre_grasp(c.pose, approach)
        if workspace_check(c.pose, approach) and workspace_check(pgp, approach):
            ref = np.zeros(3) if ref_point is None else np.asarray(ref_point, dtype=float)
            return GraspPlan(c.pose, pgp, ref, approach)
    raise NoReachableCandidate(f"none of {len(candidates)} candidates is reachable")


def plan_grasp(model: ObjectModel, obj_pose: Pose, mode: GraspSource, noise_std: float,
               rng: np.random.Generator, workspace_check: WorkspaceCheck) -> GraspPlan:
    """Full prior pipeline: oracle, 45 deg transform for top-down, reachability, reference point."""
    cands = oracle_grasps(model, obj_pose, mode, noise_std, rng)
    if mode is GraspSource.TOP_DOWN:
        for c in cands:
            c.pose = vgn_to_hand(c.pose)
    ref = object_reference_point(model, obj_pose, mode)
    return select_reachable(cands, workspace_check, ref)
