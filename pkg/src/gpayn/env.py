"""Quasi-static tabletop grasping environment for a 9-DoF five-fingered hand.

No dynamics: each step teleports the hand by the clipped action offsets, closes
fingers until their tips meet the object surface, and applies three rules to
the object (push while free, rigid attachment under an opposing grip, drop on
slip).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import reward as rw
from .geometry import Pose, angle_between, quat_from_axis_angle, rpy_to_quat
from .grasp_prior import GraspPlan, GraspSource, plan_grasp
from .hand import HandModel, fingertip_positions, fingertips_local_batch, load_hand
from .objects import DEFAULT_OBJECT, ObjectModel, get_object
from .reward import RewardBreakdown, RewardHistory, StepInfo, TerminationCause

N_FINGERS = 5
BASE_OBS_DIM = 23
ACTION_DIM = 15
_GRID = np.linspace(1.0 / 32, 1.0, 32)
_SEARCH_ROUNDS = 2  # contact located to 32**-2 of the commanded joint step
_PUSH_ITERS = 4


class PreGraspInfeasible(RuntimeError):
    pass


class EpisodeFinished(RuntimeError):
    pass


@dataclass
class EnvConfig:
    object: str = DEFAULT_OBJECT
    hand_file: str | None = None
    workspace_center: tuple[float, float, float] = (0.0, 0.0, 0.2)
    workspace_size: tuple[float, float, float] = (0.4, 0.6, 0.4)
    cone_half_angle_deg: float = 60.0
    placement_center: tuple[float, float] = (0.0, 0.0)
    placement_half_extents: tuple[float, float] = (0.08, 0.12)
    pos_limit: float = 0.01
    rpy_limit: float = 0.05
    finger_limit: float = 0.1
    contact_tol: float = 0.002
    opposing_dot: float = -0.5
    d_max: float = 0.15
    t_max: int = 1000
    success_height_mm: float = 100.0
    literal_dist_sign: bool = False
    visual_dim: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("workspace_center", "workspace_size", "placement_center", "placement_half_extents"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "EnvConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def dynamics_dict(self) -> dict:
        """Everything that shapes transitions; the seed is excluded."""
        d = self.to_dict()
        d.pop("seed")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.dynamics_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def obs_dim(self) -> int:
        return BASE_OBS_DIM + self.visual_dim

    @property
    def action_limits(self) -> np.ndarray:
        return np.concatenate([np.full(3, self.pos_limit), np.full(3, self.rpy_limit),
                               np.full(9, self.finger_limit)])


@dataclass
class HandState:
    eef_pose: Pose
    qpos: np.ndarray


@dataclass
class ObjectState:
    pose: Pose
    height_above_table: float = 0.0  # mm
    attached: bool = False

    def copy(self) -> "ObjectState":
        return ObjectState(self.pose.copy(), self.height_above_table, self.attached)


@dataclass
class ContactState:
    touching: np.ndarray  # (5,) bool
    normals: np.ndarray  # (5, 3) outward object normals at the closest points
    distances: np.ndarray  # (5,) fingertip-sphere to surface, m

    @property
    def count(self) -> int:
        return int(self.touching.sum())

    def has_opposing_pair(self, max_dot: float = -0.5) -> bool:
        idx = np.flatnonzero(self.touching)
        if len(idx) < 2:
            return False
        n = self.normals[idx]
        dots = n @ n.T
        return bool((dots[np.triu_indices(len(idx), 1)] <= max_dot).any())


@dataclass
class Observation:
    eef_pose: np.ndarray  # position (m) + RPY (rad)
    qpos: np.ndarray
    tactile: np.ndarray
    object_ref_point: np.ndarray
    visual_features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.eef_pose, self.qpos, self.tactile.astype(float),
                               self.object_ref_point, self.visual_features])


@dataclass
class Action:
    eef_pos_offset: np.ndarray
    eef_rpy_offset: np.ndarray
    finger_offsets: np.ndarray

    @classmethod
    def from_vector(cls, a) -> "Action":
        a = np.asarray(a, dtype=float).reshape(ACTION_DIM)
        return cls(a[:3].copy(), a[3:6].copy(), a[6:].copy())

    @classmethod
    def zero(cls) -> "Action":
        return cls.from_vector(np.zeros(ACTION_DIM))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.eef_pos_offset, self.eef_rpy_offset, self.finger_offsets])


@dataclass
class StepResult:
    observation: Observation
    reward: RewardBreakdown
    termination: TerminationCause
    info: StepInfo

    @property
    def done(self) -> bool:
        return self.termination.done


def workspace_check(pose: Pose, approach_dir, center, size, cone_half_angle: float) -> bool:
    """Analytic stand-in for IK feasibility: position box plus approach-axis cone."""
    p = pose.position
    if not np.all(np.isfinite(p)):
        return False
    lo = np.asarray(center) - 0.5 * np.asarray(size)
    hi = np.asarray(center) + 0.5 * np.asarray(size)
    if np.any(p < lo) or np.any(p > hi):
        return False
    return angle_between(pose.rotation[:, 0], np.asarray(approach_dir, dtype=float)) <= cone_half_angle


def sphere_contacts(model: ObjectModel, obj_pose: Pose, centers: np.ndarray, radius: float,
                    tol: float) -> ContactState:
    d, n = model.signed_distance(obj_pose, centers)
    dist = d - radius
    return ContactState(dist <= tol, n, dist)


def contact_state(hand: HandModel, hand_state: HandState, model: ObjectModel,
                  obj: ObjectState, tol: float = 0.002) -> ContactState:
    tips = fingertip_positions(hand, hand_state.eef_pose, hand_state.qpos)
    return sphere_contacts(model, obj.pose, tips, hand.fingertip_radius, tol)


def check_termination(info: StepInfo, d_max: float = 0.15, t_max: int = 1000,
                      success_height_mm: float = 100.0) -> TerminationCause:
    if info.attached and info.h_mm >= success_height_mm:
        return TerminationCause.SUCCESS
    if info.displacement > d_max:
        return TerminationCause.OBJECT_DISPLACED
    if info.ik_failed:
        return TerminationCause.IK_INFEASIBLE
    if info.step_index >= t_max:
        return TerminationCause.TIMEOUT
    return TerminationCause.RUNNING


def height_mm(model: ObjectModel, pose: Pose) -> float:
    return max(0.0, (pose.position[2] - model.rest_z) * 1000.0)


def settle_on_table(model: ObjectModel, pose: Pose) -> Pose:
    """Drop the object upright onto the table, keeping x/y and heading."""
    x_axis = pose.rotation[:, 0]
    yaw = np.arctan2(x_axis[1], x_axis[0]) if np.hypot(x_axis[0], x_axis[1]) > 1e-9 else 0.0
    return Pose([pose.position[0], pose.position[1], model.rest_z],
                quat_from_axis_angle([0.0, 0.0, 1.0], yaw))


def update_object(model: ObjectModel, obj: ObjectState, contacts: ContactState,
                  hand_pose: Pose, rel_pose: Pose | None,
                  opposing_dot: float = -0.5) -> tuple[ObjectState, Pose | None]:
    """Attachment and slip rules; returns the new object state and hand-relative pose.

    Pushing is resolved during hand motion (see ``GraspEnv._push``) because it
    needs the pusher geometry, not just contact flags.
    """
    if obj.attached:
        if contacts.count < 2:
            pose = settle_on_table(model, obj.pose)
            return ObjectState(pose, 0.0, False), None
        return obj, rel_pose
    if contacts.count >= 2 and contacts.has_opposing_pair(opposing_dot):
        rel = hand_pose.inverse().compose(obj.pose)
        return ObjectState(obj.pose, obj.height_above_table, True), rel
    return obj, None


class GraspEnv:
    """Single-threaded environment instance; not shared between threads."""

    def __init__(self, config: EnvConfig | None = None, hand: HandModel | None = None,
                 visual_fn: Callable[["GraspEnv"], np.ndarray] | None = None):
        self.config = config or EnvConfig()
        self.hand = hand or load_hand(self.config.hand_file)
        self.model: ObjectModel = get_object(self.config.object)
        self.visual_fn = visual_fn
        self._groups = self.hand.finger_groups()
        self._group_acts = [self.hand.group_actuators(g) for g in self._groups]
        self._limits = self.config.action_limits
        self._cone = np.deg2rad(self.config.cone_half_angle_deg)
        self.episode_id = -1
        self.hand_state: HandState | None = None
        self.object_state: ObjectState | None = None
        self._done = True

    # -- placement and planning ------------------------------------------------

    def sample_object_pose(self, seed: int) -> Pose:
        rng = np.random.default_rng(seed)
        c = np.asarray(self.config.placement_center)
        half = np.asarray(self.config.placement_half_extents)
        xy = c + rng.uniform(-1.0, 1.0, 2) * half
        yaw = rng.uniform(0.0, 2 * np.pi)
        return Pose([xy[0], xy[1], self.model.rest_z], quat_from_axis_angle([0, 0, 1], yaw))

    def workspace_ok(self, pose: Pose, approach_dir) -> bool:
        return workspace_check(pose, approach_dir, self.config.workspace_center,
                               self.config.workspace_size, self._cone)

    def plan(self, seed: int, mode: GraspSource, noise_std: float,
             rng: np.random.Generator) -> GraspPlan:
        return plan_grasp(self.model, self.sample_object_pose(seed), mode, noise_std, rng,
                          self.workspace_ok)

    # -- episode ---------------------------------------------------------------

    def reset(self, plan: GraspPlan, seed: int) -> Observation:
        if not self.workspace_ok(plan.pre_grasp_pose, plan.approach_dir):
            raise PreGraspInfeasible("pre-grasp pose fails the workspace check")
        obj_pose = self.sample_object_pose(seed)
        self.plan_ = plan
        self.approach_dir = np.asarray(plan.approach_dir, dtype=float)
        self.ref_point = np.array(plan.object_ref_point, dtype=float)
        self.object_state = ObjectState(obj_pose, 0.0, False)
        self.initial_xy = obj_pose.position[:2].copy()
        self.hand_state = HandState(plan.pre_grasp_pose.copy(), self.hand.qpos_open.copy())
        self._rpy = plan.pre_grasp_pose.rpy
        self._rel: Pose | None = None
        self.episode_id += 1
        self.step_index = 0
        self._done = False
        self.contacts = self._contacts()
        self.info = self._info(ik_failed=False)
        self.history = RewardHistory.start(self.info)
        return self.observation()

    def observation(self) -> Observation:
        hs = self.hand_state
        vis = np.zeros(0)
        if self.config.visual_dim:
            vis = np.asarray(self.visual_fn(self), dtype=float) if self.visual_fn else np.zeros(self.config.visual_dim)
        return Observation(np.concatenate([hs.eef_pose.position, self._rpy]), hs.qpos.copy(),
                           self.contacts.touching.copy(), self.ref_point.copy(), vis)

    def clip_action(self, action) -> Action:
        a = action.vector() if isinstance(action, Action) else np.asarray(action, dtype=float)
        if a.shape != (ACTION_DIM,):
            raise ValueError(f"action must have {ACTION_DIM} components")
        if not np.all(np.isfinite(a)):
            raise ValueError("action must be finite")
        return Action.from_vector(np.clip(a, -self._limits, self._limits))

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinished("episode finished; call reset()")
        a = self.clip_action(action)
        hs, obj = self.hand_state, self.object_state

        new_pos = hs.eef_pose.position + a.eef_pos_offset
        if np.any(a.eef_rpy_offset != 0.0):
            new_rpy = self._rpy + a.eef_rpy_offset
            target = Pose(new_pos, rpy_to_quat(new_rpy))
        else:
            new_rpy = self._rpy
            target = Pose(new_pos, hs.eef_pose.orientation)
        if obj.attached:
            obj_z = target.compose(self._rel).position[2]
            if obj_z < self.model.rest_z:
                target.position[2] += self.model.rest_z - obj_z

        ik_failed = not self.workspace_ok(target, self.approach_dir)
        if not ik_failed:
            hs.eef_pose = target
            self._rpy = new_rpy
            if obj.attached:
                self._follow_hand()
            else:
                self._push()
            self._close_fingers(a.finger_offsets)

        self.contacts = self._contacts()
        new_obj, self._rel = update_object(self.model, self.object_state, self.contacts,
                                           hs.eef_pose, self._rel, self.config.opposing_dot)
        if new_obj.pose is not self.object_state.pose:
            self.object_state = new_obj
            self.contacts = self._contacts()
        self.object_state = new_obj
        self.object_state.height_above_table = height_mm(self.model, new_obj.pose)

        self.step_index += 1
        prev = self.info
        self.info = self._info(ik_failed)
        term = check_termination(self.info, self.config.d_max, self.config.t_max,
                                 self.config.success_height_mm)
        sign = 1.0 if self.config.literal_dist_sign else -1.0
        rew, self.history = rw.compute(prev, self.info, term, self.history, sign)
        self._done = term.done
        return StepResult(self.observation(), rew, term, self.info)

    # -- internals -------------------------------------------------------------

    def _contacts(self) -> ContactState:
        return contact_state(self.hand, self.hand_state, self.model, self.object_state,
                             self.config.contact_tol)

    def _info(self, ik_failed: bool) -> StepInfo:
        hs = self.hand_state
        rel = hs.eef_pose.rotation.T @ (self.ref_point - hs.eef_pose.position)
        disp = float(np.hypot(*(self.object_state.pose.position[:2] - self.initial_xy)))
        ever = (self.history.ever_two_contacts if self.step_index > 0 else False) or self.contacts.count >= 2
        return StepInfo(
            f_count=self.contacts.count,
            d_cm=float(np.hypot(rel[0], rel[1]) * 100.0),
            h_mm=self.object_state.height_above_table,
            step_index=self.step_index,
            episode_id=self.episode_id,
            ever_two_contacts=ever,
            attached=self.object_state.attached,
            displacement=disp,
            ik_failed=ik_failed,
        )

    def _follow_hand(self):
        pose = self.hand_state.eef_pose.compose(self._rel)
        self.object_state = ObjectState(pose, height_mm(self.model, pose), True)

    def _pushers(self, eef: Pose, qpos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tips = fingertip_positions(self.hand, eef, qpos)
        palm = self.hand.palm_centers @ eef.rotation.T + eef.position
        radii = np.concatenate([np.full(len(tips), self.hand.fingertip_radius), self.hand.palm_radii])
        return np.vstack([tips, palm]), radii

    def _push(self):
        centers, radii = self._pushers(self.hand_state.eef_pose, self.hand_state.qpos)
        pose = self.object_state.pose
        moved = False
        for _ in range(_PUSH_ITERS):
            d, n = self.model.signed_distance(pose, centers)
            pen = radii - d
            hit = pen > 1e-12
            if not hit.any():
                break
            shift = -(pen[hit, None] * n[hit]).sum(axis=0)
            shift[2] = 0.0
            if not np.any(shift):
                break
            pose = Pose(pose.position + shift, pose.orientation)
            moved = True
        if moved:
            self.object_state = ObjectState(pose, self.object_state.height_above_table, False)

    def _tip_penetration(self, Q: np.ndarray) -> np.ndarray:
        """Per-fingertip penetration depth for a batch of actuator vectors, shape (B, 5)."""
        local = fingertips_local_batch(self.hand, Q).reshape(-1, 3)
        eef = self.hand_state.eef_pose
        d = self.model.distance_only(self.object_state.pose, local @ eef.rotation.T + eef.position)
        return (self.hand.fingertip_radius - d).reshape(len(Q), -1)

    def _close_fingers(self, dq: np.ndarray):
        """Move each actuator group; a group whose tip would penetrate stops at the surface.

        Groups share no actuators or fingers, so they are resolved independently
        in one batch.
        """
        q0 = self.hand_state.qpos
        q_cmd = self.hand.clamp(q0 + dq)
        moving = [i for i, acts in enumerate(self._group_acts) if np.any(q_cmd[acts] != q0[acts])]
        if not moving:
            return
        q_new = q0.copy()
        Q = np.repeat(q0[None], len(moving) + 1, axis=0)
        for r, g in enumerate(moving, start=1):
            Q[r, self._group_acts[g]] = q_cmd[self._group_acts[g]]
        pen = self._tip_penetration(Q)
        search = []
        for r, g in enumerate(moving, start=1):
            acts, fingers = self._group_acts[g], self._groups[g]
            pen0, pen_cmd = pen[0, fingers].max(), pen[r, fingers].max()
            if pen_cmd <= 0.0 or (pen0 > 0.0 and pen_cmd < pen0):
                # free motion, or a move that reduces an existing penetration
                q_new[acts] = q_cmd[acts]
            elif pen0 <= 0.0:
                search.append(g)
        if search:
            n = len(_GRID)
            lo = np.zeros(len(search))
            hi = np.ones(len(search))
            for _ in range(_SEARCH_ROUNDS):
                ts = lo[:, None] + (hi - lo)[:, None] * _GRID  # (S, n)
                Q = np.repeat(q0[None], len(search) * n, axis=0)
                for k, g in enumerate(search):
                    acts = self._group_acts[g]
                    Q[k * n:(k + 1) * n, acts] = q0[acts] + ts[k][:, None] * (q_cmd[acts] - q0[acts])
                pen = self._tip_penetration(Q)
                for k, g in enumerate(search):
                    hit = pen[k * n:(k + 1) * n, self._groups[g]].max(axis=1) > 0.0
                    j = int(np.argmax(hit))
                    hi[k] = ts[k, j]
                    lo[k] = ts[k, j - 1] if j > 0 else lo[k]
            for k, g in enumerate(search):
                acts = self._group_acts[g]
                q_new[acts] = q0[acts] + lo[k] * (q_cmd[acts] - q0[acts])
        self.hand_state.qpos = q_new

    @property
    def done(self) -> bool:
        return self._done


def start_episode(env: GraspEnv, seed: int, mode: GraspSource, noise_std: float,
                  max_tries: int = 20) -> tuple[Observation, GraspPlan, int]:
    """Sample placements from a seed stream until a reachable plan exists; returns the seed used."""
    from .grasp_prior import NoReachableCandidate

    ss = np.random.SeedSequence(seed)
    last_err: Exception | None = None
    for child in ss.spawn(max_tries):
        ep_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        rng = np.random.default_rng(child.spawn(1)[0])
        try:
            plan = env.plan(ep_seed, mode, noise_std, rng)
            return env.reset(plan, ep_seed), plan, ep_seed
        except (NoReachableCandidate, PreGraspInfeasible) as e:
            last_err = e
    raise last_err  # type: ignore[misc]
