"""Reference numpy implementations of the hot kernels.

Shapes: ``raw``/``Q`` are (N, K, D), ``M`` is (N, D), GRU weights are packed
as ``Wx (I, 3H)``, ``Wh (H, 3H)``, ``b (3H,)`` in gate order update, reset,
candidate.
"""
import numpy as np
from scipy.special import expit


def mgs_orthonormalize(raw, drop_tol=1e-8):
    """Modified Gram-Schmidt over axis 1, in index order.

    Returns ``(Q, R)`` where ``R[n, k, j]`` (j < k) is the coefficient removed
    along ``Q[n, j]`` and ``R[n, k, k]`` the residual norm. Residuals shorter
    than ``drop_tol`` are zeroed.
    """
    raw = np.asarray(raw, dtype=np.float64)
    N, K, D = raw.shape
    Q = np.zeros_like(raw)
    R = np.zeros((N, K, K))
    for k in range(K):
        u = raw[:, k, :].copy()
        for j in range(k):
            c = np.einsum("nd,nd->n", u, Q[:, j, :])
            u -= c[:, None] * Q[:, j, :]
            R[:, k, j] = c
        norm = np.sqrt(np.einsum("nd,nd->n", u, u))
        keep = norm >= drop_tol
        R[:, k, k] = norm
        Q[keep, k, :] = u[keep] / norm[keep, None]
    return Q, R


def deflate(M, Q, eps=1e-6):
    """Sequential removal of ``M``'s component along each ``Q[:, k]``."""
    m = np.array(M, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    N, K, D = Q.shape
    alphas = np.zeros((N, K))
    for k in range(K):
        v = Q[:, k, :]
        alpha = np.einsum("nd,nd->n", m, v) / (np.einsum("nd,nd->n", v, v) + eps)
        m -= alpha[:, None] * v
        alphas[:, k] = alpha
    return m, alphas


def gru_step(x, h, Wx, Wh, b):
    """One gated recurrent update for a batch of rows.

    z = sigmoid(x Wz + h Uz + bz)
    r = sigmoid(x Wr + h Ur + br)
    n = tanh(x Wn + bn + (r * h) Un)
    h' = (1 - z) * n + z * h
    """
    H = h.shape[-1]
    a = x @ Wx + b
    zr = expit(a[:, :2 * H] + h @ Wh[:, :2 * H])
    z, r = zr[:, :H], zr[:, H:]
    n = np.tanh(a[:, 2 * H:] + (r * h) @ Wh[:, 2 * H:])
    return (1.0 - z) * n + z * h
