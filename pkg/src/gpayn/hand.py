"""Hand description loading and fingertip forward kinematics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Pose

HAND_SCHEMA_VERSION = 1
N_ACTUATED = 9
N_FINGERS = 5


class HandDescriptionError(ValueError):
    pass


@dataclass(frozen=True)
class ChainJoint:
    actuator: int
    ratio: float
    axis: np.ndarray
    link: np.ndarray


@dataclass(frozen=True)
class Finger:
    name: str
    mount: np.ndarray
    joints: tuple[ChainJoint, ...]

    @property
    def actuators(self) -> tuple[int, ...]:
        return tuple(sorted({j.actuator for j in self.joints}))


@dataclass(frozen=True)
class HandModel:
    name: str
    fingers: tuple[Finger, ...]
    qpos_open: np.ndarray
    qpos_close: np.ndarray
    joint_limits: np.ndarray  # (9, 2)
    fingertip_radius: float
    palm_centers: np.ndarray  # (P, 3) palm frame
    palm_radii: np.ndarray

    def clamp(self, qpos: np.ndarray) -> np.ndarray:
        return np.clip(qpos, self.joint_limits[:, 0], self.joint_limits[:, 1])

    def finger_groups(self) -> list[list[int]]:
        """Fingers that share an actuator must move (and stop) together."""
        groups: list[tuple[set, list[int]]] = []
        for i, f in enumerate(self.fingers):
            acts = set(f.actuators)
            for g_acts, members in groups:
                if g_acts & acts:
                    g_acts |= acts
                    members.append(i)
                    break
            else:
                groups.append((acts, [i]))
        return [members for _, members in groups]

    def group_actuators(self, group: list[int]) -> list[int]:
        return sorted({a for i in group for a in self.fingers[i].actuators})


def _vec(x, n=3) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise HandDescriptionError(f"expected {n}-vector, got {x!r}")
    return v


def parse_hand(doc: dict) -> HandModel:
    if doc.get("schema_version") != HAND_SCHEMA_VERSION:
        raise HandDescriptionError(f"unsupported hand schema_version {doc.get('schema_version')!r}")
    acts = doc["actuators"]
    if len(acts) != N_ACTUATED:
        raise HandDescriptionError(f"hand must have {N_ACTUATED} actuated joints, got {len(acts)}")
    limits = np.array([a["limits"] for a in acts], dtype=float)
    q_open = np.array([a["open"] for a in acts], dtype=float)
    q_close = np.array([a["close"] for a in acts], dtype=float)
    for q, label in ((q_open, "open"), (q_close, "close")):
        if np.any(q < limits[:, 0]) or np.any(q > limits[:, 1]):
            raise HandDescriptionError(f"qpos_{label} outside joint limits")
    if np.any(q_open == q_close):
        raise HandDescriptionError("qpos_open and qpos_close must differ in every joint")
    fingers = []
    for f in doc["fingers"]:
        joints = []
        for j in f["joints"]:
            axis = _vec(j["axis"])
            joints.append(ChainJoint(int(j["actuator"]), float(j.get("ratio", 1.0)),
                                     axis / np.linalg.norm(axis), _vec(j["link"])))
            if not 0 <= joints[-1].actuator < N_ACTUATED:
                raise HandDescriptionError(f"bad actuator index in finger {f['name']}")
        fingers.append(Finger(f["name"], _vec(f["mount"]), tuple(joints)))
    if len(fingers) != N_FINGERS:
        raise HandDescriptionError(f"hand must have {N_FINGERS} fingers")
    used = {j.actuator for f in fingers for j in f.joints}
    if used != set(range(N_ACTUATED)):
        raise HandDescriptionError("every actuator must drive at least one chain joint")
    palm = doc.get("palm_spheres", [])
    return HandModel(
        name=doc.get("name", "hand"),
        fingers=tuple(fingers),
        qpos_open=q_open,
        qpos_close=q_close,
        joint_limits=limits,
        fingertip_radius=float(doc["fingertip_radius"]),
        palm_centers=np.array([p["center"] for p in palm], dtype=float).reshape(-1, 3),
        palm_radii=np.array([p["radius"] for p in palm], dtype=float),
    )


def load_hand(path: str | Path | None = None) -> HandModel:
    if path is None:
        text = resources.files("gpayn.data").joinpath("hand_v1.json").read_text()
    else:
        text = Path(path).read_text()
    return parse_hand(json.loads(text))


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


def finger_tip_local(finger: Finger, qpos: np.ndarray) -> np.ndarray:
    """Tip of one finger chain in the palm frame (reference loop, unbatched)."""
    rot = np.eye(3)
    pos = finger.mount.copy()
    for j in finger.joints:
        rot = rot @ _axis_rotation(j.axis, j.ratio * qpos[j.actuator])
        pos = pos + rot @ j.link
    return pos


_YZX = np.array([1, 2, 0])
_ZXY = np.array([2, 0, 1])


class _HandKernel:
    """All five chains evaluated together; shorter chains are padded with zero links."""

    def __init__(self, fingers: tuple[Finger, ...]):
        J = max(len(f.joints) for f in fingers)
        F = len(fingers)
        self.mounts = np.stack([f.mount for f in fingers])
        self.acts = np.zeros((F, J), dtype=int)
        self.ratios = np.zeros((F, J))
        self.axes = np.zeros((J, F, 3))  # zero axis on padded joints -> identity
        self.links = np.zeros((J, F, 3))
        for i, f in enumerate(fingers):
            for j, jt in enumerate(f.joints):
                self.acts[i, j] = jt.actuator
                self.ratios[i, j] = jt.ratio
                self.axes[j, i] = jt.axis
                self.links[j, i] = jt.link

    def __call__(self, Q: np.ndarray) -> np.ndarray:
        # tip = mount + R1 (l1 + R2 (l2 + R3 l3)), rotations applied to vectors only
        theta = Q[:, self.acts] * self.ratios  # (B, F, J)
        s, c = np.sin(theta), 1.0 - np.cos(theta)
        w = np.zeros((len(Q),) + self.mounts.shape)
        for j in range(self.axes.shape[0] - 1, -1, -1):
            a = self.axes[j]
            w = w + self.links[j]
            kw = a[:, _YZX] * w[..., _ZXY] - a[:, _ZXY] * w[..., _YZX]  # a x w
            k2w = a * (w * a).sum(-1, keepdims=True) - w  # a x (a x w), |a| = 1
            w = w + s[..., j, None] * kw + c[..., j, None] * k2w
        return self.mounts + w


def _kernel(hand: HandModel) -> _HandKernel:
    k = hand.__dict__.get("_kernel")
    if k is None:
        k = _HandKernel(hand.fingers)
        object.__setattr__(hand, "_kernel", k)
    return k


def fingertips_local_batch(hand: HandModel, Q: np.ndarray) -> np.ndarray:
    """Palm-frame tips for a batch of actuator vectors: (B, 9) -> (B, 5, 3)."""
    return _kernel(hand)(np.atleast_2d(Q))


def fingertips_local(hand: HandModel, qpos: np.ndarray) -> np.ndarray:
    return fingertips_local_batch(hand, np.asarray(qpos, dtype=float)[None])[0]


def fingertip_positions(hand: HandModel, eef_pose: Pose, qpos: np.ndarray) -> np.ndarray:
    """World-frame fingertip centres, shape (5, 3)."""
    local = fingertips_local(hand, qpos)
    return local @ eef_pose.rotation.T + eef_pose.position
