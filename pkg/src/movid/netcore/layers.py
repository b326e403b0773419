"""Differentiable building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the cache and the output gradient and returns input and parameter
gradients. Arrays are float64 with features on the last axis.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

LN_EPS = 1e-12
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dy, x, W):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


def layernorm_forward(x, gain, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + offset, (xhat, inv)


def layernorm_backward(dy, cache, gain):
    xhat, inv = cache
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def gelu_forward(x):
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    return dy * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))


def dropout_mask(shape, rate, rng: np.random.Generator):
    """Inverted-dropout mask; ``None`` when dropout is inactive."""
    if rate <= 0.0 or rng is None:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def gru_sequence_forward(X, h0, Wx, Wh, b):
    """Unroll the gated recurrent cell over axis 1 of ``X`` (B, T, I).

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + bn + (r * h) Un), h' = (1 - z) * n + z * h.
    """
    B, T, _ = X.shape
    H = Wh.shape[0]
    A = X @ Wx + b
    hs = np.empty((B, T + 1, H))
    hs[:, 0] = h0
    gates = np.empty((B, T, 3, H))
    for t in range(T):
        h = hs[:, t]
        zr = expit(A[:, t, :2 * H] + h @ Wh[:, :2 * H])
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(A[:, t, 2 * H:] + (r * h) @ Wh[:, 2 * H:])
        hs[:, t + 1] = (1.0 - z) * n + z * h
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2] = z, r, n
    return hs, (X, hs, gates)


def gru_step_backward(dh_new, h, z, r, n, Wh):
    """Gradients of one cell update; returns (dh_prev, dA_row, dWh)."""
    H = h.shape[-1]
    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z
    dn_pre = dn * (1.0 - n * n)
    rh = r * h
    dWh = np.empty_like(Wh)
    dWh[:, 2 * H:] = rh.T @ dn_pre
    drh = dn_pre @ Wh[:, 2 * H:].T
    dr = drh * h
    dh += drh * r
    dzr_pre = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=-1)
    dWh[:, :2 * H] = h.T @ dzr_pre
    dh += dzr_pre @ Wh[:, :2 * H].T
    return dh, np.concatenate([dzr_pre, dn_pre], axis=-1), dWh


def gru_sequence_backward(dhs, cache, Wx, Wh):
    """Backprop through time. ``dhs`` is (B, T+1, H): gradient w.r.t. every state."""
    X, hs, gates = cache
    B, T, _ = X.shape
    dA = np.empty((B, T, Wx.shape[1]))
    dWh = np.zeros_like(Wh)
    dh = dhs[:, T].copy()
    for t in range(T - 1, -1, -1):
        z, r, n = gates[:, t, 0], gates[:, t, 1], gates[:, t, 2]
        dh, dA[:, t], dWh_t = gru_step_backward(dh, hs[:, t], z, r, n, Wh)
        dWh += dWh_t
        dh += dhs[:, t]
    dX = dA @ Wx.T
    dWx = X.reshape(-1, X.shape[-1]).T @ dA.reshape(-1, dA.shape[-1])
    db = dA.reshape(-1, dA.shape[-1]).sum(axis=0)
    return dX, dh, dWx, dWh, db


def l2_normalize_forward(x):
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / norm, norm


def l2_normalize_backward(dz, z, norm):
    return (dz - z * (z * dz).sum(axis=-1, keepdims=True)) / norm
