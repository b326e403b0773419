"""The network: recurrent motion encoder, 4-layer view encoder, basis
generator and context-conditioned recurrent pose decoder.

Batched tensors are laid out (B, T, features). Keypoint outputs are
root-relative camera-frame joints flattened to ``3 * J`` values.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .. import kernels
from ..errors import ShapeMismatch
from ..geometry import NUM_ANGLES, NUM_JOINTS, Keypoints2D
from ..viewfeat import VIEW_FEAT_DIM, view_features, view_features_backward
from . import layers as L
from .params import ParamStore

IN_DIM = 3 * NUM_JOINTS
OUT_DIM = 3 * NUM_JOINTS


@dataclass(frozen=True)
class EncoderConfig:
    d_view: int = 32
    d_motion: int = 32
    d_base: int = 32
    n_bases: int = 4
    hidden: int = 64
    view_hidden: int = 64
    dropout: float = 0.1
    window: int = 16
    gelu: str = "erf"

    def __post_init__(self):
        if not self.d_view == self.d_motion == self.d_base:
            raise ValueError("d_view, d_motion and d_base must be equal")
        if self.n_bases < 1 or self.window < 1:
            raise ValueError("n_bases and window must be >= 1")
        if self.gelu != "erf":
            raise ValueError("only the exact erf GELU is implemented")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def init_params(cfg: EncoderConfig, seed: int) -> ParamStore:
    p = ParamStore()
    H, D, Hv = cfg.hidden, cfg.d_motion, cfg.view_hidden
    p.add_glorot("motion.Wx", (IN_DIM, 3 * H), seed)
    p.add_glorot("motion.Wh", (H, 3 * H), seed)
    p.add_const("motion.b", (3 * H,))
    p.add_glorot("motion.Wm", (H, D), seed)
    p.add_const("motion.bm", (D,))
    p.add_glorot("motion.Wk", (H, OUT_DIM), seed)
    p.add_const("motion.bk", (OUT_DIM,))
    widths = [VIEW_FEAT_DIM, Hv, Hv, Hv, cfg.d_view]
    for i in range(4):
        p.add_glorot(f"view.W{i}", (widths[i], widths[i + 1]), seed)
        p.add_const(f"view.b{i}", (widths[i + 1],))
        p.add_const(f"view.g{i}", (widths[i + 1],), 1.0)
        p.add_const(f"view.o{i}", (widths[i + 1],))
    p.add_glorot("basis.W", (cfg.d_view, cfg.n_bases * cfg.d_base), seed)
    p.add_const("basis.b", (cfg.n_bases * cfg.d_base,))
    p.add_glorot("decoder.Wx", (D + OUT_DIM, 3 * H), seed)
    p.add_glorot("decoder.Wh", (H, 3 * H), seed)
    p.add_const("decoder.b", (3 * H,))
    p.add_glorot("decoder.Wo", (H, OUT_DIM), seed)
    p.add_const("decoder.bo", (OUT_DIM,))
    p.add_glorot("anchor.W", (NUM_ANGLES, D), seed)
    p.add_const("anchor.b", (D,))
    return p


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    return init_params(cfg, 0).shapes()


def encode_keypoints(kp: Keypoints2D, image_size) -> np.ndarray:
    """(..., J) keypoints -> (..., 3J) network input.

    Coordinates map to roughly [-1, 1] about the image centre so a horizontal
    flip negates x exactly; occluded joints contribute zeros.
    """
    w, h = image_size
    pts = kp.points
    conf = kp.confidence
    x = (2.0 * pts[..., 0] - (w - 1)) / w
    y = (2.0 * pts[..., 1] - (h - 1)) / h
    visible = conf > 0
    out = np.stack([np.where(visible, x, 0.0), np.where(visible, y, 0.0), conf], axis=-1)
    return out.reshape(out.shape[:-2] + (IN_DIM,))


# ---------------------------------------------------------------------------
# motion encoder

def motion_forward(p: ParamStore, X, h0=None):
    """X (B, T, 3J) -> M_init (B, T, D), K3D (B, T, 3J), final state, cache."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[-1] != IN_DIM:
        raise ShapeMismatch(f"motion encoder expects (B, T, {IN_DIM}), got {X.shape}")
    B = X.shape[0]
    H = p["motion.Wh"].shape[0]
    h0 = np.zeros((B, H)) if h0 is None else np.asarray(h0, dtype=np.float64).reshape(B, H)
    hs, gcache = L.gru_sequence_forward(X, h0, p["motion.Wx"], p["motion.Wh"], p["motion.b"])
    hseq = hs[:, 1:]
    M = hseq @ p["motion.Wm"] + p["motion.bm"]
    K = hseq @ p["motion.Wk"] + p["motion.bk"]
    return M, K, hs[:, -1], (gcache, hseq)


def motion_backward(p: ParamStore, cache, dM, dK, dh_final=None):
    gcache, hseq = cache
    B, T, H = hseq.shape
    h2 = hseq.reshape(-1, H)
    g = {
        "motion.Wm": h2.T @ dM.reshape(-1, dM.shape[-1]),
        "motion.bm": dM.reshape(-1, dM.shape[-1]).sum(axis=0),
        "motion.Wk": h2.T @ dK.reshape(-1, dK.shape[-1]),
        "motion.bk": dK.reshape(-1, dK.shape[-1]).sum(axis=0),
    }
    dhs = np.zeros((B, T + 1, H))
    dhs[:, 1:] = dM @ p["motion.Wm"].T + dK @ p["motion.Wk"].T
    if dh_final is not None:
        dhs[:, -1] += dh_final
    dX, dh0, g["motion.Wx"], g["motion.Wh"], g["motion.b"] = L.gru_sequence_backward(
        dhs, gcache, p["motion.Wx"], p["motion.Wh"])
    return g, dX, dh0


# ---------------------------------------------------------------------------
# view encoder

def view_forward(p: ParamStore, F, dropout: float = 0.0, rng=None):
    """Four blocks of dense -> layer norm -> GELU -> dropout.

    Dropout applies only when ``rng`` is given (training mode).
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape[-1] != VIEW_FEAT_DIM:
        raise ShapeMismatch(f"view encoder expects width {VIEW_FEAT_DIM}, got {F.shape[-1]}")
    x = F
    caches = []
    for i in range(4):
        a, _ = L.dense_forward(x, p[f"view.W{i}"], p[f"view.b{i}"])
        n, ln_cache = L.layernorm_forward(a, p[f"view.g{i}"], p[f"view.o{i}"])
        y, gelu_cache = L.gelu_forward(n)
        mask = L.dropout_mask(y.shape, dropout, rng)
        if mask is not None:
            y = y * mask
        caches.append((x, ln_cache, gelu_cache, mask))
        x = y
    return x, caches


def view_preactivations(p: ParamStore, F):
    """Per-layer outputs of the normalisation step (before gain/offset), eval mode."""
    x = np.asarray(F, dtype=np.float64)
    out = []
    for i in range(4):
        a = x @ p[f"view.W{i}"] + p[f"view.b{i}"]
        n, (xhat, _) = L.layernorm_forward(a, p[f"view.g{i}"], p[f"view.o{i}"])
        out.append(xhat)
        x, _ = L.gelu_forward(n)
    return out


def view_backward(p: ParamStore, caches, dV):
    g = {}
    dy = dV
    for i in range(3, -1, -1):
        x, ln_cache, gelu_cache, mask = caches[i]
        if mask is not None:
            dy = dy * mask
        dn = L.gelu_backward(dy, gelu_cache)
        da, g[f"view.g{i}"], g[f"view.o{i}"] = L.layernorm_backward(dn, ln_cache, p[f"view.g{i}"])
        dy, g[f"view.W{i}"], g[f"view.b{i}"] = L.dense_backward(da, x, p[f"view.W{i}"])
    return g, dy


# ---------------------------------------------------------------------------
# basis generator

def basis_forward(p: ParamStore, V, n_bases: int):
    raw = V @ p["basis.W"] + p["basis.b"]
    return raw.reshape(raw.shape[:-1] + (n_bases, -1))


def basis_backward(p: ParamStore, V, draw):
    d = draw.reshape(draw.shape[:-2] + (-1,))
    dV, gW, gb = L.dense_backward(d, V, p["basis.W"])
    return {"basis.W": gW, "basis.b": gb}, dV


# ---------------------------------------------------------------------------
# pose decoder

def context_summary(window_rows):
    """Mean of buffered keypoint rows, summed in arrival order; zeros when empty."""
    if len(window_rows) == 0:
        return None
    acc = window_rows[0].copy()
    for row in window_rows[1:]:
        acc = acc + row
    return acc / len(window_rows)


def decoder_forward(p: ParamStore, Mo, window: int, hd0=None, prior=None):
    """Recurrent decoder over (B, T, D) features with a feedback context.

    The context for frame t is the mean of the previous ``window`` decoded
    frames (``prior`` supplies frames decoded before this call).
    """
    Mo = np.asarray(Mo, dtype=np.float64)
    B, T, D = Mo.shape
    Wx, Wh, b = p["decoder.Wx"], p["decoder.Wh"], p["decoder.b"]
    if Wx.shape[0] != D + OUT_DIM:
        raise ShapeMismatch(f"decoder expects feature width {Wx.shape[0] - OUT_DIM}, got {D}")
    H = Wh.shape[0]
    hd = np.zeros((B, H)) if hd0 is None else np.asarray(hd0, dtype=np.float64).reshape(B, H)
    history = [] if prior is None else [np.asarray(prior[:, i]) for i in range(prior.shape[1])]
    n_prior = len(history)
    hs = np.empty((B, T + 1, H))
    hs[:, 0] = hd
    gates = np.empty((B, T, 3, H))
    U = np.empty((B, T, D + OUT_DIM))
    out = np.empty((B, T, OUT_DIM))
    counts = np.empty(T, dtype=int)
    for t in range(T):
        win = history[max(0, len(history) - window):]
        ctx = context_summary(win)
        counts[t] = len(win)
        U[:, t, :D] = Mo[:, t]
        U[:, t, D:] = 0.0 if ctx is None else ctx
        a = U[:, t] @ Wx + b
        h = hs[:, t]
        zr = expit(a[:, :2 * H] + h @ Wh[:, :2 * H])
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(a[:, 2 * H:] + (r * h) @ Wh[:, 2 * H:])
        hs[:, t + 1] = (1.0 - z) * n + z * h
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2] = z, r, n
        out[:, t] = hs[:, t + 1] @ p["decoder.Wo"] + p["decoder.bo"]
        history.append(out[:, t])
    return out, hs[:, -1], (U, hs, gates, counts, n_prior, window)


def decoder_backward(p: ParamStore, cache, dout):
    """Returns (grads, dMo, dh0). Gradients flow through the feedback context."""
    U, hs, gates, counts, n_prior, window = cache
    B, T, _ = dout.shape
    D = U.shape[-1] - OUT_DIM
    Wx, Wh, Wo = p["decoder.Wx"], p["decoder.Wh"], p["decoder.Wo"]
    H = Wh.shape[0]
    dout = np.array(dout, dtype=np.float64)
    dA = np.empty((B, T, 3 * H))
    dWh = np.zeros_like(Wh)
    dWo = np.zeros_like(Wo)
    dbo = np.zeros(OUT_DIM)
    dMo = np.empty((B, T, D))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dWo += hs[:, t + 1].T @ dout[:, t]
        dbo += dout[:, t].sum(axis=0)
        dh = dh + dout[:, t] @ Wo.T
        z, r, n = gates[:, t, 0], gates[:, t, 1], gates[:, t, 2]
        dh, dA[:, t], dWh_t = L.gru_step_backward(dh, hs[:, t], z, r, n, Wh)
        dWh += dWh_t
        du = dA[:, t] @ Wx.T
        dMo[:, t] = du[:, :D]
        c = counts[t]
        if c:
            dctx = du[:, D:] / c
            # window covers history indices [n_prior + t - c, n_prior + t)
            for s in range(n_prior + t - c, n_prior + t):
                if s >= n_prior:
                    dout[:, s - n_prior] += dctx
    U2 = U.reshape(-1, U.shape[-1])
    dA2 = dA.reshape(-1, 3 * H)
    grads = {"decoder.Wx": U2.T @ dA2, "decoder.Wh": dWh, "decoder.b": dA2.sum(axis=0),
             "decoder.Wo": dWo, "decoder.bo": dbo}
    return grads, dMo, dh


# ---------------------------------------------------------------------------
# inference-only single-frame stages (shared by streaming and the batch oracle)

def motion_step(p: ParamStore, x_row, h):
    """One motion-encoder step on a (B, 3J) row; returns (M_init, K3D, h')."""
    h_new = kernels.gru_step(x_row, h, p["motion.Wx"], p["motion.Wh"], p["motion.b"])
    return h_new @ p["motion.Wm"] + p["motion.bm"], h_new @ p["motion.Wk"] + p["motion.bk"], h_new


def view_embed(p: ParamStore, k3d_flat):
    F = view_features(k3d_flat.reshape(k3d_flat.shape[:-1] + (NUM_JOINTS, 3)))
    V, _ = view_forward(p, F)
    return V


def decoder_step(p: ParamStore, m_row, ctx, hd):
    B, D = m_row.shape
    u = np.empty((B, D + OUT_DIM))
    u[:, :D] = m_row
    u[:, D:] = 0.0 if ctx is None else ctx
    hd_new = kernels.gru_step(u, hd, p["decoder.Wx"], p["decoder.Wh"], p["decoder.b"])
    return hd_new @ p["decoder.Wo"] + p["decoder.bo"], hd_new
