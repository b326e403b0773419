import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TINY
from movid.errors import EmptyPrototypes, InsufficientViews
from movid.evaluation import pa_mpjpe_per_frame
from movid.geometry import (NUM_JOINTS, Keypoints2D, body_frame_joints, horizontal_flip,
                            mirror_joints)
from movid.netcore.model import OUT_DIM
from movid.pipeline import PoseModel
from movid.streaming import (STAGES, RefinementPolicy, RingBuffer, StreamingEngine, calibrate_prototypes,
                             decide_flip, difficulty_score, oracle_batch, run_batch)

SIZE = (1280, 720)


def random_stream(rng, T):
    pts = np.column_stack([rng.uniform(0, SIZE[0], T * NUM_JOINTS), rng.uniform(0, SIZE[1], T * NUM_JOINTS)])
    return Keypoints2D(pts.reshape(T, NUM_JOINTS, 2), rng.uniform(0, 1, (T, NUM_JOINTS)))


def policy_for(model, kps, theta):
    """Prototype taken from one frame's own embedding so scores spread over (0, 1]."""
    view = run_batch(model, kps, SIZE)["view"]
    return RefinementPolicy(view[len(view) // 2:len(view) // 2 + 1], theta_flip=theta)


# ---------------------------------------------------------------------------
# ring buffer

def test_ring_buffer_keeps_exactly_w_slots():
    buf = RingBuffer(16, 3, 2, 4, 5)
    slots = buf.keypoints
    for i in range(10_000):
        buf.push(np.full(3, i), np.full(2, i), np.full(4, i), np.full(5, i))
    assert buf.slot_count == 16 and buf.count == 16
    assert buf.keypoints is slots
    held = buf.keypoints[buf.order(), 0]
    assert held.tolist() == list(range(10_000 - 16, 10_000))
    assert buf.frame_indices().tolist() == held.tolist()


@given(capacity=st.integers(1, 9), pushes=st.integers(0, 40))
def test_ring_buffer_order_is_oldest_first(capacity, pushes):
    buf = RingBuffer(capacity, 1, 1, 1, 1)
    for i in range(pushes):
        buf.push([i], [i], [i], [i])
    expected = list(range(max(0, pushes - capacity), pushes))
    assert buf.enc_state[buf.order(), 0].tolist() == expected
    assert [r[0] for r in buf.recent_keypoints()] == expected


def test_ring_buffer_copy_is_independent():
    buf = RingBuffer(3, 1, 1, 1, 1)
    buf.push([1], [1], [1], [1])
    other = buf.copy()
    other.push([2], [2], [2], [2])
    assert buf.count == 1 and other.count == 2
    assert buf.keypoints[1, 0] == 0.0


def test_ring_buffer_rejects_zero_capacity():
    with pytest.raises(ValueError):
        RingBuffer(0, 1, 1, 1, 1)


# ---------------------------------------------------------------------------
# stream vs batch

@pytest.mark.parametrize("use_projection", [True, False])
def test_stream_equals_batch_oracle(rng, use_projection):
    model = PoseModel.create(TINY, seed=11)
    engine = StreamingEngine(model, use_projection=use_projection)
    for T in (1, 5, 60):
        kps = random_stream(rng, T)
        _, frames = engine.run_stream(kps, SIZE)
        streamed = np.stack([f.refined.joints for f in frames])
        batch = run_batch(model, kps, SIZE, use_projection)["refined"]
        assert np.abs(streamed - batch).max() <= 1e-9
    if use_projection:
        assert np.array_equal(oracle_batch(model, kps, SIZE), batch)


def test_buffer_holds_the_latest_outputs(rng):
    model = PoseModel.create(TINY, seed=2)
    kps = random_stream(rng, 10)
    state, frames = StreamingEngine(model).run_stream(kps, SIZE)
    held = state.buffer.keypoints[state.buffer.order()]
    expected = np.stack([f.plain.reshape(-1) for f in frames[-TINY.window:]])
    assert np.array_equal(held, expected)
    assert state.frame == 10


# ---------------------------------------------------------------------------
# policy

def test_score_is_one_at_a_prototype_and_small_when_orthogonal():
    policy = RefinementPolicy(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]))
    assert difficulty_score([3.0, 0.0, 0.0], policy) == 1.0
    assert difficulty_score([0.0, 0.0, 1.0], policy) == pytest.approx(np.exp(-1 / 0.0625))
    assert difficulty_score([0.0, 0.0, 1.0], policy) < 1e-6
    with pytest.raises(EmptyPrototypes):
        difficulty_score([1.0], RefinementPolicy(np.zeros((0, 1))))


def test_decision_endpoints_and_hysteresis():
    p = RefinementPolicy(np.eye(2), theta_flip=0.5, hysteresis=0.05)
    assert decide_flip(0.0, p.with_theta(0.0), False)
    assert not decide_flip(1.0, p.with_theta(1.0), True)
    assert not decide_flip(0.48, p, False)
    assert decide_flip(0.48, p, True)
    assert not decide_flip(0.44, p, True)
    with pytest.raises(ValueError):
        RefinementPolicy(np.eye(2), theta_flip=1.5)


def test_activation_endpoints_and_monotone_in_theta(rng):
    model = PoseModel.create(TINY, seed=5)
    kps = random_stream(rng, 40)
    base = policy_for(model, kps, 0.5)
    rates = []
    for theta in np.linspace(0.0, 1.0, 11):
        engine = StreamingEngine(model, base.with_theta(float(theta)))
        _, frames = engine.run_stream(kps, SIZE)
        rates.append(np.mean([f.flip_activated for f in frames]))
    assert rates[0] == 1.0 and rates[-1] == 0.0
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert 0.0 < rates[5] < 1.0


# ---------------------------------------------------------------------------
# flip refinement

def test_flip_refine_is_the_explicit_average(rng):
    model = PoseModel.create(TINY, seed=8)
    engine = StreamingEngine(model)
    kps = random_stream(rng, 6)
    state = engine.new_state(SIZE)
    for t in range(5):
        engine.push_frame(state, kps.frame(t))
    kp = kps.frame(5)
    refined = engine.flip_refine(state, kp)

    # two explicit passes over the same persistent state
    plain, _, _, _ = engine._pass(state, kp, mirrored_context=False)
    flipped, _, _, _ = engine._pass(state, horizontal_flip(kp, SIZE[0]), mirrored_context=True)
    expected = 0.5 * (plain.reshape(NUM_JOINTS, 3) + mirror_joints(flipped.reshape(NUM_JOINTS, 3)))
    assert np.array_equal(refined, expected)

    # push_frame with refinement forced on returns the same average
    forced = StreamingEngine(model, RefinementPolicy(np.ones((1, TINY.d_view)), theta_flip=0.0))
    st2 = forced.new_state(SIZE)
    for t in range(5):
        forced.push_frame(st2, kps.frame(t))
    res = forced.push_frame(st2, kp)
    assert res.flip_activated
    # the forced stream refined earlier frames, but its persistent state never saw them
    assert np.array_equal(res.refined.joints, expected)


def test_mirror_symmetric_toy_model_is_unchanged_by_refinement(rng):
    # zero output weights leave the decoder bias, which is chosen mirror-symmetric,
    # so the model is exactly flip-equivariant and refinement must be the identity
    model = PoseModel.create(TINY, seed=9).copy()
    model.params["decoder.Wo"] = np.zeros_like(model.params["decoder.Wo"])
    b = rng.standard_normal((NUM_JOINTS, 3))
    sym = 0.5 * (b + mirror_joints(b))
    model.params["decoder.bo"] = sym.reshape(OUT_DIM)
    assert np.allclose(mirror_joints(sym), sym, atol=1e-15)
    kps = random_stream(rng, 12)
    off = StreamingEngine(model).run_stream(kps, SIZE)[1]
    on = StreamingEngine(model, RefinementPolicy(np.ones((1, TINY.d_view)), theta_flip=0.0)).run_stream(kps, SIZE)[1]
    for a, b2 in zip(off, on):
        assert b2.flip_activated
        assert np.abs(a.refined.joints - b2.refined.joints).max() <= 1e-9


def test_persistent_state_is_bit_equal_with_and_without_refinement(rng):
    model = PoseModel.create(TINY, seed=13)
    kps = random_stream(rng, 30)
    plain_engine = StreamingEngine(model)
    flip_engine = StreamingEngine(model, policy_for(model, kps, 0.5))
    s_plain, s_flip = plain_engine.new_state(SIZE), flip_engine.new_state(SIZE)
    activated = 0
    for t in range(30):
        a = plain_engine.push_frame(s_plain, kps.frame(t))
        passes_before = s_flip.passes
        b = flip_engine.push_frame(s_flip, kps.frame(t))
        activated += b.flip_activated
        assert s_flip.passes - passes_before == (2 if b.flip_activated else 1)
        assert np.array_equal(s_plain.enc_h, s_flip.enc_h)
        assert np.array_equal(s_plain.dec_h, s_flip.dec_h)
        for name in ("enc_state", "dec_state", "keypoints", "view"):
            assert np.array_equal(getattr(s_plain.buffer, name), getattr(s_flip.buffer, name))
        assert np.array_equal(a.plain, b.plain)
        if not b.flip_activated:
            assert b.latency_ns["flip_extra"] == 0
            assert np.array_equal(a.refined.joints, b.refined.joints)
        else:
            assert b.latency_ns["flip_extra"] > 0
    assert 0 < activated < 30
    assert s_plain.passes == 30 and s_flip.passes == 30 + activated


def test_frame_result_reports_every_stage(rng):
    model = PoseModel.create(TINY, seed=1)
    _, frames = StreamingEngine(model).run_stream(random_stream(rng, 3), SIZE)
    for f in frames:
        assert tuple(f.latency_ns) == STAGES
        assert f.total_ns == sum(f.latency_ns.values())
        assert f.refined.frame_tag == "body"


# ---------------------------------------------------------------------------
# calibration

def _with_noise(sample, view_ids, sigma_px, rng):
    views = []
    for v in sample.views:
        if v.view_id in view_ids:
            kp = Keypoints2D(v.keypoints.points + sigma_px * rng.standard_normal(v.keypoints.points.shape),
                             v.keypoints.confidence)
            v = dataclasses.replace(v, keypoints=kp)
        views.append(v)
    return dataclasses.replace(sample, views=tuple(views))


def test_calibration_picks_the_worst_views(small_dataset, rng):
    model = PoseModel.create(TINY, seed=4)
    validation = [_with_noise(s, {3, 12}, 80.0, rng) for s in small_dataset[:3]]
    policy = calibrate_prototypes(model, validation, n_hard=2)

    # independent per-view errors and embeddings
    errors, embeds = {}, {}
    for s in validation:
        gt = body_frame_joints(s.clip)
        for v in s.views:
            res = run_batch(model, v.keypoints, v.camera.image_size)
            errors.setdefault(v.view_id, []).extend(pa_mpjpe_per_frame(res["refined"], gt))
            embeds.setdefault(v.view_id, []).append(res["view"])
    mean_err = {k: np.mean(e) for k, e in errors.items()}
    worst = sorted(mean_err, key=lambda k: -mean_err[k])[:2]
    assert list(policy.hard_views) == worst
    for proto, vid in zip(policy.prototypes, worst):
        assert np.allclose(proto, np.concatenate(embeds[vid]).mean(axis=0), atol=1e-12)
    assert policy.view_errors[worst[0]] == pytest.approx(mean_err[worst[0]])
    with pytest.raises(InsufficientViews):
        calibrate_prototypes(model, validation, n_hard=17)
