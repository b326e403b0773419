"""Orthogonal projection of motion features and the disentanglement losses.

Per frame, generated view bases are orthonormalized by modified Gram-Schmidt
and the motion feature is deflated along each of them in turn:

    alpha_k = <m, v_k> / (||v_k||^2 + eps),   m <- m - alpha_k v_k

The orthogonality loss is the mean squared inner product between projected
motion features and view embeddings. The alignment loss is a symmetric
InfoNCE over the 2N set formed by anchor and motion embeddings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import DegenerateBatch, NonNormalizedInput, ShapeMismatch
from .netcore.layers import l2_normalize_backward, l2_normalize_forward

PROJ_EPS = 1e-6
DROP_TOL = 1e-8


@dataclass(frozen=True)
class BasisSet:
    vectors: np.ndarray           # (..., K, D)
    orthonormalized: bool = False
    coeffs: np.ndarray | None = None   # (..., K, K) Gram-Schmidt coefficients

    @property
    def K(self) -> int:
        return self.vectors.shape[-2]

    @property
    def D(self) -> int:
        return self.vectors.shape[-1]

    def retained(self) -> np.ndarray:
        """Boolean (..., K) mask of bases that survived orthonormalization."""
        return np.any(self.vectors != 0.0, axis=-1)


@dataclass(frozen=True)
class ProjectionResult:
    m_proj: np.ndarray            # same shape as the input motion features
    alphas: np.ndarray            # (..., K)


@dataclass
class LossReport:
    l_pose: float
    l_ortho: float
    l_align: float
    l_total: float
    alpha: float
    beta: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        return {"l_pose": self.l_pose, "l_ortho": self.l_ortho,
                "l_align": self.l_align, "l_total": self.l_total}


def _flat(a, tail):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape((-1,) + a.shape[a.ndim - tail:]), a.shape[:a.ndim - tail]


# ---------------------------------------------------------------------------
# orthonormalization and deflation

def orthonormalize_bases(raw, drop_tol: float = DROP_TOL) -> BasisSet:
    """Modified Gram-Schmidt over the K axis of a (..., K, D) array."""
    flat, lead = _flat(raw, 2)
    Q, R = kernels.mgs_orthonormalize(flat, drop_tol)
    K, D = flat.shape[1:]
    return BasisSet(Q.reshape(lead + (K, D)), True, R.reshape(lead + (K, K)))


def orthonormalize_backward(dQ, raw, basis: BasisSet) -> np.ndarray:
    """Gradient of the orthonormalized bases w.r.t. the raw bases."""
    raw_f, lead = _flat(raw, 2)
    Q, _ = _flat(basis.vectors, 2)
    R, _ = _flat(basis.coeffs, 2)
    dQ = np.array(_flat(dQ, 2)[0])
    N, K, D = raw_f.shape
    draw = np.zeros_like(raw_f)
    for k in range(K - 1, -1, -1):
        # replay the partially deflated vectors u^(0..k)
        us = [raw_f[:, k, :]]
        for j in range(k):
            us.append(us[-1] - R[:, k, j, None] * Q[:, j, :])
        norm = R[:, k, k]
        keep = norm >= DROP_TOL
        q = Q[:, k, :]
        du = np.zeros((N, D))
        safe = np.where(keep, norm, 1.0)[:, None]
        du[keep] = ((dQ[:, k, :] - q * np.einsum("nd,nd->n", q, dQ[:, k, :])[:, None]) / safe)[keep]
        for j in range(k - 1, -1, -1):
            qj = Q[:, j, :]
            u_before = us[j]
            c = R[:, k, j, None]
            proj = np.einsum("nd,nd->n", qj, du)[:, None]
            dQ[:, j, :] += -c * du - u_before * proj
            du = du - qj * proj
        draw[:, k, :] = du
    return draw.reshape(lead + (K, D))


def ortho_project(M, B: BasisSet, eps: float = PROJ_EPS) -> ProjectionResult:
    M = np.asarray(M, dtype=np.float64)
    if M.shape[-1] != B.D or M.shape[:-1] != B.vectors.shape[:-2]:
        raise ShapeMismatch(f"motion {M.shape} vs bases {B.vectors.shape}")
    m_flat, lead = _flat(M, 1)
    q_flat, _ = _flat(B.vectors, 2)
    m_proj, alphas = kernels.deflate(m_flat, q_flat, eps)
    return ProjectionResult(m_proj.reshape(M.shape), alphas.reshape(lead + (B.K,)))


def ortho_project_backward(dm_proj, M, B: BasisSet, result: ProjectionResult,
                           eps: float = PROJ_EPS):
    """Returns (dM, dQ) for the sequential deflation."""
    m0, lead = _flat(M, 1)
    Q, _ = _flat(B.vectors, 2)
    alphas, _ = _flat(result.alphas, 1)
    dm = np.array(_flat(dm_proj, 1)[0])
    N, K, D = Q.shape
    ms = [m0]
    for k in range(K - 1):
        ms.append(ms[-1] - alphas[:, k, None] * Q[:, k, :])
    dQ = np.zeros_like(Q)
    for k in range(K - 1, -1, -1):
        v = Q[:, k, :]
        a = alphas[:, k, None]
        s = np.einsum("nd,nd->n", v, v)[:, None] + eps
        dalpha = -np.einsum("nd,nd->n", dm, v)[:, None]
        dQ[:, k, :] = -a * dm
        dp = dalpha / s
        ds = -dalpha * a / s
        dQ[:, k, :] += dp * ms[k] + 2.0 * ds * v
        dm = dm + dp * v
    return dm.reshape(M.shape), dQ.reshape(B.vectors.shape)


# ---------------------------------------------------------------------------
# losses

def loss_ortho(m_proj, V):
    """Mean over rows of <m_proj, v>^2; returns (loss, d_m_proj, d_V)."""
    m_proj = np.asarray(m_proj, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if m_proj.shape != V.shape:
        raise ShapeMismatch(f"{m_proj.shape} vs {V.shape}")
    p = (m_proj * V).sum(axis=-1)
    n = p.size
    loss = float((p * p).sum() / n)
    scale = (2.0 / n) * p[..., None]
    return loss, scale * V, scale * m_proj


def anchor_embed(angles, W, b):
    """Linear map of canonical angles followed by L2 normalization."""
    z, cache = anchor_embed_forward(angles, W, b)
    return z


def anchor_embed_forward(angles, W, b):
    a = np.asarray(angles, dtype=np.float64) @ W + b
    z, norm = l2_normalize_forward(a)
    return z, (np.asarray(angles, dtype=np.float64), z, norm)


def anchor_embed_backward(dz, cache):
    angles, z, norm = cache
    da = l2_normalize_backward(dz, z, norm)
    a2 = angles.reshape(-1, angles.shape[-1])
    da2 = da.reshape(-1, da.shape[-1])
    return a2.T @ da2, da2.sum(axis=0)


def loss_align(z_anchor, z_motion, tau: float = 0.07, norm_tol: float = 1e-6):
    """Symmetric InfoNCE over ``[z_anchor; z_motion]`` with partner index i +/- N.

    Returns (loss, d_z_anchor, d_z_motion).
    """
    za = np.asarray(z_anchor, dtype=np.float64)
    zm = np.asarray(z_motion, dtype=np.float64)
    if za.ndim != 2 or za.shape != zm.shape:
        raise ShapeMismatch(f"{za.shape} vs {zm.shape}")
    N = za.shape[0]
    if N == 0:
        raise DegenerateBatch("contrastive alignment needs at least one pair")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    Z = np.concatenate([za, zm], axis=0)
    norms = np.sqrt((Z * Z).sum(axis=1))
    if np.any(np.abs(norms - 1.0) > norm_tol):
        raise NonNormalizedInput(f"row norms deviate from 1 by up to {np.abs(norms - 1).max():.3g}")
    n2 = 2 * N
    S = (Z @ Z.T) / tau
    np.fill_diagonal(S, -np.inf)
    partner = np.concatenate([np.arange(N, n2), np.arange(N)])
    lse = logsumexp(S, axis=1)
    pos = S[np.arange(n2), partner]
    loss = float(np.mean(lse - pos))
    P = np.exp(S - lse[:, None])
    P[np.arange(n2), partner] -= 1.0
    dS = P / n2
    dZ = (dS + dS.T) @ Z / tau
    return loss, dZ[:N], dZ[N:]


def total_loss(l_pose: float, l_ortho: float, l_align: float, alpha: float, beta: float,
               grad_pose=None, grad_ortho=None, grad_align=None) -> LossReport:
    """Weighted sum; gradients (dicts keyed by parameter name) combine the same way."""
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be non-negative")
    total = l_pose + alpha * l_ortho + beta * l_align
    grads: dict[str, np.ndarray] = {}
    for weight, part in ((1.0, grad_pose), (alpha, grad_ortho), (beta, grad_align)):
        for name, g in (part or {}).items():
            if name in grads:
                grads[name] = grads[name] + weight * g
            else:
                grads[name] = weight * np.asarray(g, dtype=np.float64)
    return LossReport(float(l_pose), float(l_ortho), float(l_align), float(total),
                      float(alpha), float(beta), grads)
