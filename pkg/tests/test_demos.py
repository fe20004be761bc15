import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpayn import reward as rw
from gpayn.demos import (APPROACH_STEPS, CLOSE_STEPS, ConfigHashMismatch, DemoBuffer, PhaseState, SchemaMismatch,
                         collect_demos, load_demos, phase_of, run_scripted_episode, save_demos, scripted_action)
from gpayn.env import EnvConfig, GraspEnv, HandState, start_episode
from gpayn.geometry import Pose
from gpayn.grasp_prior import GraspPlan, GraspSource
from gpayn.hand import load_hand
from gpayn.reward import RewardHistory, TerminationCause as T

HAND = load_hand()
PLAN = GraspPlan(Pose([0.05, 0, 0]), Pose([0.0, 0, 0]), np.zeros(3), np.array([1.0, 0, 0]))


def hs(q=None):
    return HandState(Pose(), HAND.qpos_open.copy() if q is None else q)


def test_phase_boundaries():
    assert phase_of(0) == phase_of(99) == "approach"
    assert phase_of(100) == phase_of(599) == "close"
    assert phase_of(600) == phase_of(5000) == "lift"


def test_approach_step_example():
    a = scripted_action(50, hs(), PLAN, HAND, PhaseState())
    assert np.allclose(a.eef_pos_offset, [0.0005, 0, 0], atol=1e-15)
    assert not a.eef_rpy_offset.any() and not a.finger_offsets.any()


def test_close_step_example():
    delta = HAND.qpos_close - HAND.qpos_open
    assert np.all(delta > 0)
    ps = PhaseState()
    a = scripted_action(150, hs(), PLAN, HAND, ps)
    assert np.allclose(a.finger_offsets, np.minimum(delta / 250, 0.1 * delta), atol=1e-15)
    assert np.allclose(a.finger_offsets, delta / 250, atol=1e-15)
    assert not a.eef_pos_offset.any()
    assert np.array_equal(ps.tmp_fingers, a.finger_offsets)


def test_literal_schedule_flag():
    delta = HAND.qpos_close - HAND.qpos_open
    a = scripted_action(150, hs(), PLAN, HAND, PhaseState(), literal_schedule=True)
    assert np.allclose(a.finger_offsets, -0.7 * delta, atol=1e-12)  # progress (150-500)/500


def test_lift_holds_tmp_fingers():
    ps = PhaseState(np.full(9, 0.003))
    a = scripted_action(700, hs(), PLAN, HAND, ps)
    assert np.allclose(a.eef_pos_offset, [0, 0, 0.002])
    assert np.array_equal(a.finger_offsets, ps.tmp_fingers)


@given(st.integers(APPROACH_STEPS, APPROACH_STEPS + CLOSE_STEPS - 1),
       st.lists(st.floats(0.0, 1.6), min_size=9, max_size=9))
def test_close_never_overshoots_schedule(step, q):
    q = np.array(q)
    a = scripted_action(step, hs(q), PLAN, HAND, PhaseState())
    progress = (step - APPROACH_STEPS) / CLOSE_STEPS
    target = HAND.qpos_open + progress * (HAND.qpos_close - HAND.qpos_open)
    assert np.all(q + a.finger_offsets <= target + 1e-12)


@pytest.fixture(scope="module")
def small_buffer():
    env = GraspEnv(EnvConfig())
    return collect_demos(env, 1300, seed=4, noise_std=0.002)


def test_collect_quota_and_bookkeeping(small_buffer):
    b = small_buffer
    assert len(b) >= 1300 and b.episode_count == 2
    lengths = b.episode_lengths()
    assert sum(n for n, _ in lengths) == len(b)
    assert b.success_rate == sum(c == 1 for _, c in lengths) / len(lengths)
    m = b.manifest()
    assert m["success_rate"] == b.success_rate and m["transition_count"] == len(b)


def test_collect_is_deterministic(small_buffer, tmp_path):
    again = collect_demos(GraspEnv(EnvConfig()), 1300, seed=4, noise_std=0.002)
    save_demos(small_buffer, tmp_path / "a.bin")
    save_demos(again, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_quota_zero_is_empty():
    b = collect_demos(GraspEnv(EnvConfig()), 0, seed=0)
    assert len(b) == 0 and b.obs.shape == (0, 23)


def test_phase_invariants_on_recorded_episode(small_buffer):
    n = small_buffer.episode_lengths()[0][0]
    acts = small_buffer.actions[:n]
    assert not acts[:100, 6:].any()
    assert not acts[100:600, :6].any()
    assert np.all(acts[600:, 6:] == acts[599, 6:])


def test_rewards_recompute_from_step_infos():
    env = GraspEnv(EnvConfig())
    _, plan, _ = start_episode(env, 21, GraspSource.LATERAL, 0.0)
    infos, stored = [env.info], []
    run_scripted_episode(env, plan, on_step=lambda o, a, r: (infos.append(r.info), stored.append(r)))
    hist = RewardHistory.start(infos[0])
    for prev, nxt, res in zip(infos, infos[1:], stored):
        out, hist = rw.compute(prev, nxt, res.termination, hist)
        assert out == res.reward


def _random_buffer(rng, n=17, d=23):
    done = np.zeros(n, np.uint8)
    done[[5, 11]] = [1, 3]
    return DemoBuffer(rng.normal(size=(n, d)).astype(np.float32), rng.normal(size=(n, 15)).astype(np.float32),
                      rng.normal(size=n).astype(np.float32), rng.normal(size=(n, d)).astype(np.float32),
                      done, "abcdef0123456789", episode_count=3, skipped_episodes=1)


def test_save_load_roundtrip(tmp_path):
    b = _random_buffer(np.random.default_rng(0))
    p = save_demos(b, tmp_path / "d.bin")
    assert load_demos(p) == b
    manifest = json.loads((tmp_path / "d.bin.manifest.json").read_text())
    assert manifest["success_count"] == 1 and manifest["transition_count"] == 17


def test_record_layout(tmp_path):
    b = _random_buffer(np.random.default_rng(1))
    data = save_demos(b, tmp_path / "d.bin", manifest=False).read_bytes()
    hlen = int.from_bytes(data[12:16], "little")
    rec = 4 * (2 * 23 + 15 + 1) + 1
    assert len(data) == 16 + hlen + 17 * rec
    first = data[16 + hlen:16 + hlen + rec]
    assert np.frombuffer(first[:92], "<f4").tolist() == b.obs[0].tolist()


def test_corrupted_header(tmp_path):
    p = save_demos(_random_buffer(np.random.default_rng(2)), tmp_path / "d.bin")
    data = bytearray(p.read_bytes())
    data[20] = 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(SchemaMismatch):
        load_demos(p)
    p.write_bytes(b"NOTADEMO" + bytes(20))
    with pytest.raises(SchemaMismatch):
        load_demos(p)


def test_truncated_body(tmp_path):
    p = save_demos(_random_buffer(np.random.default_rng(3)), tmp_path / "d.bin")
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(SchemaMismatch):
        load_demos(p)


def test_hash_mismatch(tmp_path):
    p = save_demos(_random_buffer(np.random.default_rng(4)), tmp_path / "d.bin")
    with pytest.raises(ConfigHashMismatch):
        load_demos(p, expected_hash=EnvConfig().config_hash())
    assert len(load_demos(p, expected_hash=EnvConfig().config_hash(), force=True)) == 17
