import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import axis_angle
from movid.errors import ShapeMismatch
from movid.geometry import (HIP_L, HIP_R, NUM_JOINTS, SCHEMA, SHOULDER_L, SHOULDER_R, CameraPose,
                            Skeleton3D, mirror_joints, render_views, synth_motion, transform_points)
from movid.viewfeat import (VIEW_FEAT_DIM, ViewGeomFeature, extract_sequence, extract_view_feature,
                            view_features, view_features_backward)


def _frontal():
    J = np.tile([0.0, 1.1, 2.0], (NUM_JOINTS, 1))
    J[HIP_L], J[HIP_R] = (0.1, 0.9, 2.0), (-0.1, 0.9, 2.0)
    J[SHOULDER_L], J[SHOULDER_R] = (0.15, 1.4, 2.0), (-0.15, 1.4, 2.0)
    return J


def _naive(J):
    """Feature vector read joint by joint from names, independent of the vectorised path."""
    n = {name: i for i, name in enumerate(SCHEMA.names)}
    hl, hr, sl, sr = (J[n[k]] for k in ("hip_L", "hip_R", "shoulder_L", "shoulder_R"))
    return np.array([*(hl - hr), *(sl - sr), hl[2], hr[2], sl[2], sr[2]])


def test_frontal_symmetric_pose():
    f = extract_view_feature(Skeleton3D(_frontal(), "camera"))
    assert np.allclose(f.v_hip, (0.2, 0.0, 0.0), atol=1e-15)
    assert np.allclose(f.v_shoulder, (0.3, 0.0, 0.0), atol=1e-15)
    assert (f.z_hip_L, f.z_hip_R, f.z_shoulder_L, f.z_shoulder_R) == (2.0, 2.0, 2.0, 2.0)


def test_quarter_turn_moves_hip_span_onto_depth_axis():
    J = _frontal()
    center = J[[HIP_L, HIP_R]].mean(axis=0)
    rotated = transform_points(J, CameraPose(math.pi / 2, 0.0, distance=2.0), center)
    f = extract_view_feature(Skeleton3D(rotated, "camera"))
    assert np.allclose(f.v_hip, (0.0, 0.0, -0.2), atol=1e-12)
    assert abs(f.v_shoulder[0]) < 1e-12


def test_profile_view_of_rendered_clip():
    clip = synth_motion("walk", 16, 3)
    # bodies face world +x, so the azimuth-0 camera sees the subject side-on
    side = render_views(clip, [CameraPose(0.0)]).views[0]
    front = render_views(clip, [CameraPose(3 * math.pi / 2)]).views[0]
    fs, ff = extract_sequence(side.joints_cam), extract_sequence(front.joints_cam)
    assert np.all(np.abs(fs[:, 0]) < np.abs(fs[:, 2]))
    assert np.all(fs[:, 6] != fs[:, 7])
    assert np.all(np.abs(ff[:, 0]) > np.abs(ff[:, 2]))


def test_width_vectors_are_exact_differences(rng):
    J = rng.standard_normal((NUM_JOINTS, 3))
    f = extract_view_feature(Skeleton3D(J, "camera"))
    assert np.array_equal(f.v_hip, J[HIP_L] - J[HIP_R])
    assert np.array_equal(f.v_shoulder, J[SHOULDER_L] - J[SHOULDER_R])
    assert np.array_equal(f.as_vector(), _naive(J))
    assert np.array_equal(ViewGeomFeature.from_vector(f.as_vector()).as_vector(), f.as_vector())


def test_requires_camera_frame_and_valid_shape(rng):
    with pytest.raises(ValueError):
        extract_view_feature(Skeleton3D(rng.standard_normal((NUM_JOINTS, 3)), "world"))
    with pytest.raises(ShapeMismatch):
        view_features(np.zeros((5, 16, 3)))
    with pytest.raises(ShapeMismatch):
        extract_sequence(np.zeros((0, NUM_JOINTS, 3)))


def test_sequence_rows_equal_per_frame_extraction(rng):
    seq = rng.standard_normal((7, NUM_JOINTS, 3))
    F = extract_sequence(seq)
    assert F.shape == (7, VIEW_FEAT_DIM)
    for t in range(7):
        assert np.array_equal(F[t], extract_view_feature(Skeleton3D(seq[t], "camera")).as_vector())
    single = extract_sequence(seq[:1])
    assert single.shape == (1, VIEW_FEAT_DIM) and np.array_equal(single[0], F[0])
    skeletons = [Skeleton3D(s, "camera") for s in seq]
    assert np.array_equal(extract_sequence(skeletons), F)


def test_static_pose_repeated_gives_identical_rows():
    F = extract_sequence(np.repeat(_frontal()[None], 16, axis=0))
    assert np.all(F == F[0])


def test_orbiting_camera_rows_vary_smoothly():
    J = _frontal()
    center = J.mean(axis=0)
    az = np.linspace(0, 2 * math.pi, 361)[:-1]
    F = extract_sequence(np.stack([transform_points(J, CameraPose(a, 0.0, 3.0), center) for a in az]))
    step = az[1] - az[0]
    # rotating a point at radius r by d theta moves it at most r * d theta
    radius = np.linalg.norm(J - center, axis=1).max()
    width = max(np.linalg.norm(J[HIP_L] - J[HIP_R]), np.linalg.norm(J[SHOULDER_L] - J[SHOULDER_R]))
    bound = np.sqrt(2 * (width * step) ** 2 + 4 * (radius * step) ** 2)
    diffs = np.linalg.norm(np.diff(F, axis=0), axis=1)
    assert diffs.max() <= bound + 1e-12


@given(seed=st.integers(0, 2**31), offset=st.tuples(*[st.floats(-10, 10)] * 3))
def test_translation_leaves_width_vectors_unchanged(seed, offset):
    J = np.random.default_rng(seed).standard_normal((NUM_JOINTS, 3))
    off = np.array(offset)
    a, b = view_features(J), view_features(J + off)
    assert np.allclose(a[:6], b[:6], atol=1e-12)
    assert np.allclose(b[6:], a[6:] + off[2], atol=1e-12)


@given(seed=st.integers(0, 2**31))
def test_reflection_negates_lateral_components(seed):
    J = np.random.default_rng(seed).standard_normal((NUM_JOINTS, 3))
    reflected = J * np.array([-1.0, 1.0, 1.0])
    a, b = view_features(J), view_features(reflected)
    assert np.array_equal(b[[0, 3]], -a[[0, 3]])
    assert np.array_equal(b[[1, 2, 4, 5, 6, 7, 8, 9]], a[[1, 2, 4, 5, 6, 7, 8, 9]])


@given(seed=st.integers(0, 2**31))
def test_reflection_with_label_swap(seed):
    # swapping labels as well reverses each difference, so only y and z change sign
    J = np.random.default_rng(seed).standard_normal((NUM_JOINTS, 3))
    a, b = view_features(J), view_features(mirror_joints(J))
    assert np.array_equal(b[[0, 3]], a[[0, 3]])
    assert np.array_equal(b[[1, 2, 4, 5]], -a[[1, 2, 4, 5]])
    assert np.array_equal(b[[6, 7, 8, 9]], a[[7, 6, 9, 8]])


@given(seed=st.integers(0, 2**31))
def test_non_key_joints_do_not_affect_feature(seed):
    r = np.random.default_rng(seed)
    J = r.standard_normal((NUM_JOINTS, 3))
    key = {HIP_L, HIP_R, SHOULDER_L, SHOULDER_R}
    other = J.copy()
    for j in range(NUM_JOINTS):
        if j not in key:
            other[j] += r.standard_normal(3)
    assert np.array_equal(view_features(J), view_features(other))


def test_backward_is_the_adjoint(rng):
    J = rng.standard_normal((3, NUM_JOINTS, 3))
    g = rng.standard_normal((3, VIEW_FEAT_DIM))
    # <g, A J> == <A^T g, J> for the linear map A
    assert np.isclose((g * view_features(J)).sum(), (view_features_backward(g) * J).sum(), atol=1e-12)


def test_rotation_oracle_for_width_vector():
    J = _frontal()
    R = axis_angle([0, 1, 0], 0.7)
    f = view_features(J @ R.T)
    assert np.allclose(f[:3], R @ (J[HIP_L] - J[HIP_R]), atol=1e-14)
