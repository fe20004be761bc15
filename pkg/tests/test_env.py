import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpayn.demos import PhaseState, run_scripted_episode, scripted_action
from gpayn.env import (ACTION_DIM, Action, EnvConfig, EpisodeFinished, GraspEnv, PreGraspInfeasible,
                       check_termination, start_episode, workspace_check)
from gpayn.geometry import Pose, quat_from_axis_angle
from gpayn.grasp_prior import GraspSource
from gpayn.reward import StepInfo, TerminationCause as T


@pytest.fixture(scope="module")
def env():
    return GraspEnv(EnvConfig())


def fresh(env, seed=5, mode=GraspSource.LATERAL):
    obs, plan, ep_seed = start_episode(env, seed, mode, 0.0)
    return obs, plan, ep_seed


def test_reset_is_deterministic(env):
    a, plan, s = fresh(env)
    b = env.reset(plan, s)
    assert np.array_equal(a.vector(), b.vector())
    assert env.step_index == 0
    assert np.array_equal(env.hand_state.qpos, env.hand.qpos_open)
    assert env.hand_state.eef_pose == plan.pre_grasp_pose


def test_seeds_give_different_yaws(env):
    yaws = {round(float(env.sample_object_pose(s).rpy[2]), 12) for s in range(20)}
    assert len(yaws) == 20


def test_zero_area_region_puts_object_at_center():
    e = GraspEnv(EnvConfig(placement_center=(0.02, -0.03), placement_half_extents=(0.0, 0.0)))
    for s in range(5):
        assert np.allclose(e.sample_object_pose(s).position[:2], [0.02, -0.03])


def test_zero_action_is_identity(env):
    obs, _, _ = fresh(env)
    info0 = env.info
    res = env.step(Action.zero())
    assert np.array_equal(res.observation.vector(), obs.vector())
    assert (res.info.f_count, res.info.d_cm, res.info.h_mm) == (info0.f_count, info0.d_cm, info0.h_mm)
    assert res.reward.total == 0.0


def test_huge_action_is_clipped(env):
    fresh(env)
    before = env.hand_state.eef_pose.position.copy()
    env.step(np.r_[0.0, 0.0, 1.0, np.zeros(12)])
    assert env.hand_state.eef_pose.position[2] - before[2] == pytest.approx(env.config.pos_limit)


@settings(max_examples=25)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=ACTION_DIM, max_size=ACTION_DIM))
def test_clipping_property(a):
    e = GraspEnv(EnvConfig())
    clipped = e.clip_action(np.array(a)).vector()
    assert np.all(np.abs(clipped) <= e.config.action_limits)


def test_non_finite_action_rejected(env):
    fresh(env)
    with pytest.raises(ValueError):
        env.step(np.full(ACTION_DIM, np.nan))


def test_scripted_episode_lifts_and_locks(env):
    _, plan, _ = fresh(env, seed=11)
    heights, ever = [], False
    rec = run_scripted_episode(env, plan, on_step=lambda o, a, r: heights.append(r.info.h_mm))
    assert rec.termination is T.SUCCESS
    assert env.object_state.attached and env.info.h_mm >= 100.0
    assert min(heights) >= 0.0
    with pytest.raises(EpisodeFinished):
        env.step(Action.zero())


def test_attachment_keeps_relative_pose(env):
    _, plan, _ = fresh(env, seed=2)
    phase = PhaseState()
    rel = None
    while not env.done:
        act = scripted_action(env.step_index, env.hand_state, plan, env.hand, phase)
        env.step(act)
        if env.object_state.attached and env.contacts.count >= 2:
            now = env.hand_state.eef_pose.inverse().compose(env.object_state.pose)
            if rel is None:
                rel = now
            assert np.allclose(now.position, rel.position, atol=1e-12)
            assert np.allclose(now.rotation, rel.rotation, atol=1e-12)
    assert rel is not None


def test_opening_fingers_drops_object(env):
    _, plan, _ = fresh(env, seed=3)
    phase = PhaseState()
    while env.step_index < 620:
        env.step(scripted_action(env.step_index, env.hand_state, plan, env.hand, phase))
    assert env.object_state.attached and env.object_state.height_above_table > 0
    for _ in range(20):
        res = env.step(np.r_[np.zeros(6), -np.full(9, 0.1)])
        if not env.object_state.attached:
            break
    assert not env.object_state.attached
    assert env.object_state.height_above_table == 0.0
    assert res.reward.r_fingers < 0
    assert res.reward.r_height == 0.0  # f' = 0 zeroes the height term


def test_leaving_workspace_is_ik_failure(env):
    fresh(env)
    pos = env.hand_state.eef_pose.position.copy()
    res = None
    for _ in range(200):
        res = env.step(np.r_[0.0, 0.0, -0.01, np.zeros(12)])
        if res.done:
            break
    assert res.termination is T.IK_INFEASIBLE
    assert res.info.ik_failed
    assert res.reward.r_end == -1.0
    assert env.hand_state.eef_pose.position[2] <= pos[2]


def test_pushing_object_away_displaces_it(env):
    _, plan, _ = fresh(env, seed=4)
    res = None
    for _ in range(60):
        res = env.step(np.r_[plan.approach_dir * 0.01, np.zeros(12)])
        if res.done:
            break
    assert res.termination in (T.OBJECT_DISPLACED, T.IK_INFEASIBLE)
    assert res.info.displacement > 0.0


def test_timeout():
    e = GraspEnv(EnvConfig(t_max=5))
    start_episode(e, 0, GraspSource.LATERAL, 0.0)
    for _ in range(5):
        res = e.step(Action.zero())
    assert res.termination is T.TIMEOUT


def test_infeasible_pre_grasp_rejected(env):
    _, plan, s = fresh(env)
    plan.pre_grasp_pose = Pose([5.0, 0, 0], plan.pre_grasp_pose.orientation)
    with pytest.raises(PreGraspInfeasible):
        env.reset(plan, s)


@pytest.mark.parametrize("info,expected", [
    (StepInfo(2, 0.0, 100.0, 10, attached=True), T.SUCCESS),
    (StepInfo(2, 0.0, 99.999, 10, attached=True), T.RUNNING),
    (StepInfo(0, 0.0, 100.0, 10, attached=False), T.RUNNING),
    (StepInfo(0, 0.0, 0.0, 10, displacement=0.16), T.OBJECT_DISPLACED),
    (StepInfo(0, 0.0, 0.0, 10, displacement=0.15), T.RUNNING),
    (StepInfo(0, 0.0, 0.0, 10, ik_failed=True), T.IK_INFEASIBLE),
    (StepInfo(0, 0.0, 0.0, 1000), T.TIMEOUT),
    (StepInfo(0, 0.0, 0.0, 999), T.RUNNING),
    (StepInfo(2, 0.0, 120.0, 1000, attached=True, displacement=0.2, ik_failed=True), T.SUCCESS),
    (StepInfo(0, 0.0, 0.0, 1000, displacement=0.2, ik_failed=True), T.OBJECT_DISPLACED),
    (StepInfo(0, 0.0, 0.0, 1000, ik_failed=True), T.IK_INFEASIBLE),
])
def test_termination_rules(info, expected):
    assert check_termination(info) is expected


def test_workspace_check_examples():
    c, size, cone = (0.0, 0.0, 0.2), (0.4, 0.6, 0.4), np.deg2rad(60)
    x = np.array([1.0, 0.0, 0.0])
    assert workspace_check(Pose(c), x, c, size, cone)
    assert not workspace_check(Pose([1.2, 0, 0.2]), x, c, size, cone)
    tilt_in = Pose(c, quat_from_axis_angle([0, 0, 1], np.deg2rad(59.9)))
    tilt_out = Pose(c, quat_from_axis_angle([0, 0, 1], np.deg2rad(60.1)))
    assert workspace_check(tilt_in, x, c, size, cone)
    assert not workspace_check(tilt_out, x, c, size, cone)


def test_observation_layout(env):
    obs, plan, _ = fresh(env)
    v = obs.vector()
    assert v.shape == (23,)
    ref = v[20:23].copy()
    for _ in range(30):
        res = env.step(np.r_[plan.approach_dir * 0.002, np.zeros(3), np.full(9, 0.02)])
        assert np.array_equal(res.observation.vector()[20:23], ref)


def test_visual_slot():
    e = GraspEnv(EnvConfig(visual_dim=4), visual_fn=lambda env: np.arange(4.0))
    obs, _, _ = start_episode(e, 0, GraspSource.LATERAL, 0.0)
    assert np.array_equal(obs.vector()[23:], np.arange(4.0))


def test_trajectory_determinism():
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, (80, ACTION_DIM)) * EnvConfig().action_limits * 0.3
    runs = []
    for _ in range(2):
        e = GraspEnv(EnvConfig())
        start_episode(e, 9, GraspSource.LATERAL, 0.003)
        traj = []
        for a in actions:
            r = e.step(a)
            traj.append(np.r_[r.observation.vector(), r.reward.total])
            if r.done:
                break
        runs.append(np.array(traj))
    assert np.array_equal(runs[0], runs[1])


def test_config_roundtrip(tmp_path):
    cfg = EnvConfig(object="power_drill", t_max=300)
    p = tmp_path / "env.json"
    p.write_text(__import__("json").dumps(cfg.to_dict()))
    assert EnvConfig.load(p) == cfg
    assert cfg.config_hash() == EnvConfig(object="power_drill", t_max=300, seed=7).config_hash()
    assert cfg.config_hash() != EnvConfig().config_hash()
    with pytest.raises(ValueError):
        EnvConfig.from_dict({"bogus": 1})
