import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_rotation
from movid.disentangle import (DROP_TOL, PROJ_EPS, BasisSet, anchor_embed, loss_align, loss_ortho,
                               ortho_project, orthonormalize_bases, total_loss)
from movid.errors import DegenerateBatch, NonNormalizedInput, ShapeMismatch


def _unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def infonce_oracle(za, zm, tau):
    """Direct loop over the 2N anchors: -log softmax of the partner over non-self entries."""
    Z = np.concatenate([za, zm])
    n2 = len(Z)
    N = n2 // 2
    total = 0.0
    for i in range(n2):
        p = i + N if i < N else i - N
        num = math.exp(float(Z[i] @ Z[p]) / tau)
        den = sum(math.exp(float(Z[i] @ Z[k]) / tau) for k in range(n2) if k != i)
        total += -math.log(num / den)
    return total / n2


# ---------------------------------------------------------------------------
# orthonormalization

def test_orthonormal_pair_is_unchanged():
    B = orthonormalize_bases(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert B.orthonormalized
    assert np.array_equal(B.vectors, np.eye(2))


def test_hand_gram_schmidt():
    B = orthonormalize_bases(np.array([[1.0, 0.0], [1.0, 1.0]]))
    assert np.allclose(B.vectors, np.eye(2), atol=1e-15)


def test_collinear_vector_is_dropped():
    B = orthonormalize_bases(np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert np.array_equal(B.vectors[1], [0.0, 0.0])
    assert list(B.retained()) == [True, False]


def test_near_collinear_below_tolerance_is_dropped():
    raw = np.array([[1.0, 0.0, 0.0], [1.0, 0.5 * DROP_TOL, 0.0], [0.0, 0.0, 3.0]])
    B = orthonormalize_bases(raw)
    assert list(B.retained()) == [True, False, True]


@given(seed=st.integers(0, 2**31), K=st.integers(1, 8), D=st.integers(8, 64))
def test_orthonormalized_bases_meet_the_invariant(seed, K, D):
    r = np.random.default_rng(seed)
    raw = r.standard_normal((3, K, D))
    if K > 1:
        raw[0, -1] = 2.0 * raw[0, 0]          # force one drop
    B = orthonormalize_bases(raw)
    G = np.einsum("tkd,tjd->tkj", B.vectors, B.vectors)
    off = G - np.einsum("tkk->tk", G)[..., None] * np.eye(K)
    assert np.abs(off).max() <= 1e-10
    norms = np.linalg.norm(B.vectors, axis=-1)
    assert np.all((norms == 0.0) | (np.abs(norms - 1.0) <= 1e-10))


# ---------------------------------------------------------------------------
# projection

def test_single_basis_deflation_uses_epsilon():
    B = orthonormalize_bases(np.array([[1.0, 0.0]]))
    res = ortho_project(np.array([1.0, 1.0]), B)
    assert PROJ_EPS == 1e-6
    assert res.m_proj[0] == pytest.approx(1.0 - 1.0 / (1.0 + 1e-6), abs=1e-18)
    assert res.m_proj[1] == 1.0
    assert res.alphas[0] == pytest.approx(1.0 / (1.0 + 1e-6), rel=1e-15)


def test_full_basis_removes_everything():
    B = orthonormalize_bases(np.eye(2))
    res = ortho_project(np.array([2.0, 3.0]), B)
    assert np.allclose(res.m_proj, 0.0, atol=1e-5)


def test_zero_basis_contributes_zero_alpha():
    B = orthonormalize_bases(np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    res = ortho_project(np.array([0.5, 1.0, 2.0]), B)
    assert res.alphas[1] == 0.0


def test_projection_shape_checks():
    B = orthonormalize_bases(np.ones((4, 2, 3)))
    with pytest.raises(ShapeMismatch):
        ortho_project(np.ones((4, 5)), B)
    with pytest.raises(ShapeMismatch):
        ortho_project(np.ones((3, 3)), B)


def lstsq_residual(m, Q):
    coef, *_ = np.linalg.lstsq(Q.T, m, rcond=None)
    return m - Q.T @ coef


@given(seed=st.integers(0, 2**31), K=st.integers(1, 8), D=st.integers(8, 64))
def test_projection_matches_least_squares_residual(seed, K, D):
    r = np.random.default_rng(seed)
    raw = r.standard_normal((K, D))
    m = r.standard_normal(D)
    B = orthonormalize_bases(raw)
    res = ortho_project(m, B)
    assert np.abs(res.m_proj - lstsq_residual(m, raw)).max() <= 1e-5


@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_post_projection_orthogonality(seed, scale):
    r = np.random.default_rng(seed)
    M = scale * r.standard_normal((5, 32))
    B = orthonormalize_bases(r.standard_normal((5, 4, 32)))
    res = ortho_project(M, B)
    dots = np.abs(np.einsum("td,tkd->tk", res.m_proj, B.vectors))
    bound = 1e-6 * (np.linalg.norm(M, axis=1) + 1.0)
    assert np.all(dots <= bound[:, None])
    assert res.m_proj.shape == M.shape


@given(seed=st.integers(0, 2**31))
def test_projection_is_idempotent_without_stabilizer(seed):
    r = np.random.default_rng(seed)
    B = orthonormalize_bases(r.standard_normal((6, 4, 32)))
    once = ortho_project(r.standard_normal((6, 32)), B, eps=0.0).m_proj
    twice = ortho_project(once, B, eps=0.0).m_proj
    assert np.abs(twice - once).max() <= 1e-9


@given(seed=st.integers(0, 2**31))
def test_second_pass_removes_only_the_stabilizer_residue(seed):
    # each pass keeps eps/(1+eps) of every component, so a repeat moves
    # m by sum_k c_k eps/(1+eps)^2 q_k with c_k = <m, q_k>
    r = np.random.default_rng(seed)
    B = orthonormalize_bases(r.standard_normal((6, 4, 32)))
    m = r.standard_normal((6, 32))
    once = ortho_project(m, B).m_proj
    twice = ortho_project(once, B).m_proj
    c = np.einsum("td,tkd->tk", m, B.vectors)
    expected = -np.einsum("tk,tkd->td", c * PROJ_EPS / (1 + PROJ_EPS) ** 2, B.vectors)
    assert np.abs((twice - once) - expected).max() <= 1e-12


# ---------------------------------------------------------------------------
# orthogonality loss

def test_ortho_loss_examples():
    assert loss_ortho(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]))[0] == 0.0
    u = np.array([[0.6, 0.8]])
    assert loss_ortho(u, u)[0] == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        loss_ortho(np.ones((2, 3)), np.ones((2, 4)))


def test_ortho_loss_is_mean_over_frames_and_batch(rng):
    M, V = rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 4, 5))
    expected = np.mean([(M[b, t] @ V[b, t]) ** 2 for b in range(3) for t in range(4)])
    assert loss_ortho(M, V)[0] == pytest.approx(expected, rel=1e-13)


def test_ortho_loss_gradient_matches_finite_differences(rng):
    M, V = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    _, dM, dV = loss_ortho(M, V)
    h = 1e-5
    for arr, grad in ((M, dM), (V, dV)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = loss_ortho(M, V)[0]
            arr[idx] = orig - h
            fm = loss_ortho(M, V)[0]
            arr[idx] = orig
            num[idx] = (fp - fm) / (2 * h)
        assert np.abs(num - grad).max() / np.abs(grad).max() <= 1e-7


# ---------------------------------------------------------------------------
# anchor embedding

def test_anchor_is_view_independent_and_unit_norm(rng, small_dataset):
    W, b = rng.standard_normal((24, 8)), rng.standard_normal(8)
    s = small_dataset[0]
    z = anchor_embed(s.clip.canon, W, b)
    assert np.abs(np.linalg.norm(z, axis=1) - 1.0).max() <= 1e-12
    # every view of a sample carries the same canonical angles, hence the same anchor
    for _ in s.views:
        assert np.array_equal(anchor_embed(s.clip.canon, W, b), z)


# ---------------------------------------------------------------------------
# alignment loss

def test_single_pair_loss_is_exactly_zero(rng):
    z = _unit_rows(rng, 1, 5)
    assert loss_align(z, _unit_rows(rng, 1, 5), tau=0.07)[0] == 0.0


def test_orthogonal_pair_value():
    e = np.eye(2)
    expected = math.log((math.e + 2.0) / math.e)
    assert expected == pytest.approx(0.5514, abs=1e-4)
    assert abs(loss_align(e, e, tau=1.0)[0] - expected) <= 1e-10
    assert abs(infonce_oracle(e, e, 1.0) - expected) <= 1e-12


@given(seed=st.integers(0, 2**31), N=st.integers(1, 7), tau=st.floats(0.05, 2.0))
def test_alignment_matches_loop_oracle(seed, N, tau):
    r = np.random.default_rng(seed)
    za, zm = _unit_rows(r, N, 6), _unit_rows(r, N, 6)
    assert loss_align(za, zm, tau)[0] == pytest.approx(infonce_oracle(za, zm, tau), rel=1e-10, abs=1e-12)


@given(seed=st.integers(0, 2**31))
def test_alignment_symmetric_under_block_swap(seed):
    r = np.random.default_rng(seed)
    za, zm = _unit_rows(r, 5, 4), _unit_rows(r, 5, 4)
    assert abs(loss_align(za, zm, 0.1)[0] - loss_align(zm, za, 0.1)[0]) <= 1e-12


@given(seed=st.integers(0, 2**31))
def test_alignment_invariant_under_common_rotation(seed):
    r = np.random.default_rng(seed)
    za, zm = _unit_rows(r, 6, 3), _unit_rows(r, 6, 3)
    R = random_rotation(r)
    assert abs(loss_align(za, zm, 0.2)[0] - loss_align(za @ R.T, zm @ R.T, 0.2)[0]) <= 1e-9


def _pair_with_similarity(c):
    """Unit anchors on e1/e2 with motion rows whose positive similarity is c; negatives fixed."""
    s = math.sqrt(1 - c * c)
    za = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    zm = np.array([[c, 0.0, s, 0.0], [0.0, c, 0.0, s]])
    return za, zm


def test_alignment_decreases_as_positive_similarity_rises():
    cs = np.linspace(-0.9, 0.99, 25)
    vals = [loss_align(*_pair_with_similarity(c), tau=0.5)[0] for c in cs]
    assert np.all(np.diff(vals) < 0)


def test_alignment_input_validation(rng):
    with pytest.raises(DegenerateBatch):
        loss_align(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(NonNormalizedInput):
        loss_align(2 * _unit_rows(rng, 2, 3), _unit_rows(rng, 2, 3))
    with pytest.raises(ShapeMismatch):
        loss_align(_unit_rows(rng, 2, 3), _unit_rows(rng, 3, 3))


def test_alignment_gradient_matches_finite_differences(rng):
    # perturb along the tangent space so rows stay unit length to first order
    za, zm = _unit_rows(rng, 4, 5), _unit_rows(rng, 4, 5)
    _, dza, _ = loss_align(za, zm, 0.3)
    d = rng.standard_normal(za.shape)
    d -= za * (za * d).sum(axis=1, keepdims=True)
    h = 1e-6

    def at(t):
        z = za + t * d
        return loss_align(z / np.linalg.norm(z, axis=1, keepdims=True), zm, 0.3)[0]
    numeric = (at(h) - at(-h)) / (2 * h)
    assert numeric == pytest.approx((dza * d).sum(), rel=1e-6)


# ---------------------------------------------------------------------------
# total loss

def test_total_loss_examples():
    assert total_loss(0.7, 3.0, 4.0, 0.0, 0.0).l_total == 0.7
    assert total_loss(0.0, 0.5, 9.0, 1.0, 0.0).l_total == 0.5
    with pytest.raises(ValueError):
        total_loss(0.0, 0.0, 0.0, -1.0, 0.0)


def test_total_gradient_is_the_same_linear_combination(rng):
    gp = {"a": rng.standard_normal(3), "b": rng.standard_normal(2)}
    go = {"a": rng.standard_normal(3)}
    ga = {"a": rng.standard_normal(3), "b": rng.standard_normal(2)}
    rep = total_loss(1.0, 2.0, 3.0, 0.3, 0.7, gp, go, ga)
    assert rep.l_total == pytest.approx(1.0 + 0.3 * 2.0 + 0.7 * 3.0)
    assert np.abs(rep.grads["a"] - (gp["a"] + 0.3 * go["a"] + 0.7 * ga["a"])).max() <= 1e-12
    assert np.abs(rep.grads["b"] - (gp["b"] + 0.7 * ga["b"])).max() <= 1e-12


def test_basis_set_accessors():
    B = BasisSet(np.zeros((2, 3, 5)))
    assert (B.K, B.D) == (3, 5) and not B.orthonormalized
