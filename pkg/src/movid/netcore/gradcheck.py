"""Finite-difference verification of the reverse-mode gradients.

Each component is scalarised as ``sum(w * output)`` with fixed random weights
``w`` and differentiated numerically with the five-point central stencil

    f'(x) ~ [8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))] / 12h

with ``h`` scaled by ``max(1, |x|)``. An entry's relative error is
``|a - n| / max(|a|, |n|, 1e-4 * max|a|)`` so entries far below the tensor's
scale are judged against that scale rather than against rounding noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import disentangle as dis
from ..pipeline import AblationSpec, Batch, PoseModel, forward_backward
from . import layers as L
from . import model as nm

COMPONENTS = ("linear", "motion_encoder", "view_encoder", "basis_generator", "projection",
              "pose_decoder", "anchor_embed", "losses", "full_model")
SCALE_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    component: str
    max_rel_err: float
    offending_param: str | None
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" at {self.offending_param}" if self.offending_param else ""
        return (f"{status} {self.component:16s} max_rel_err={self.max_rel_err:.3e} "
                f"tol={self.tol:.1e} entries={self.n_checked}{where}")


@dataclass
class _Problem:
    params: dict[str, np.ndarray]
    value: Callable[[], float]
    grads: Callable[[], dict[str, np.ndarray]]
    default_h: float = 1e-4


def _small_cfg() -> nm.EncoderConfig:
    return nm.EncoderConfig(d_view=6, d_motion=6, d_base=6, n_bases=3, hidden=5,
                            view_hidden=7, dropout=0.2, window=3)


def _jittered_params(cfg, rng):
    p = nm.init_params(cfg, int(rng.integers(1 << 30)))
    for name in p:
        # move biases/gains off their constant init so every path is exercised
        p[name] = p[name] + 0.1 * rng.standard_normal(p[name].shape)
    return p


def _scalarize(rng, shape):
    return rng.standard_normal(shape)


def _build(component: str, seed: int) -> _Problem:
    rng = np.random.default_rng(seed)
    cfg = _small_cfg()
    B, T = 2, 5

    if component == "linear":
        x = rng.standard_normal((B, T, 7))
        prm = {"W": rng.standard_normal((7, 4)), "b": rng.standard_normal(4)}
        w = _scalarize(rng, (B, T, 4))

        def value():
            return float((w * L.dense_forward(x, prm["W"], prm["b"])[0]).sum())

        def grads():
            _, gW, gb = L.dense_backward(w, x, prm["W"])
            return {"W": gW, "b": gb}
        return _Problem(prm, value, grads, default_h=1e-3)

    p = _jittered_params(cfg, rng)

    def subset(prefix):
        return {k: p[k] for k in p if k.startswith(prefix)}

    if component == "motion_encoder":
        X = rng.standard_normal((B, T, nm.IN_DIM))
        h0 = 0.5 * rng.standard_normal((B, cfg.hidden))
        wM = _scalarize(rng, (B, T, cfg.d_motion))
        wK = _scalarize(rng, (B, T, nm.OUT_DIM))
        wh = _scalarize(rng, (B, cfg.hidden))

        def value():
            M, K, hT, _ = nm.motion_forward(p, X, h0)
            return float((wM * M).sum() + (wK * K).sum() + (wh * hT).sum())

        def grads():
            _, _, _, cache = nm.motion_forward(p, X, h0)
            g, _, _ = nm.motion_backward(p, cache, wM, wK, wh)
            return g
        return _Problem(subset("motion."), value, grads)

    if component == "view_encoder":
        F = rng.standard_normal((B, T, 10))
        w = _scalarize(rng, (B, T, cfg.d_view))
        mask_seed = int(rng.integers(1 << 30))

        def run():
            return nm.view_forward(p, F, cfg.dropout, np.random.default_rng(mask_seed))

        def value():
            return float((w * run()[0]).sum())

        def grads():
            _, caches = run()
            return nm.view_backward(p, caches, w)[0]
        return _Problem(subset("view."), value, grads)

    if component == "basis_generator":
        V = rng.standard_normal((B, T, cfg.d_view))
        w = _scalarize(rng, (B, T, cfg.n_bases, cfg.d_base))

        def value():
            return float((w * nm.basis_forward(p, V, cfg.n_bases)).sum())

        def grads():
            return nm.basis_backward(p, V, w)[0]
        return _Problem(subset("basis."), value, grads)

    if component == "projection":
        prm = {"input.M": rng.standard_normal((B, T, 6)),
               "input.raw": rng.standard_normal((B, T, 3, 6))}
        w = _scalarize(rng, (B, T, 6))

        def run():
            bases = dis.orthonormalize_bases(prm["input.raw"])
            return bases, dis.ortho_project(prm["input.M"], bases)

        def value():
            return float((w * run()[1].m_proj).sum())

        def grads():
            bases, res = run()
            dM, dQ = dis.ortho_project_backward(w, prm["input.M"], bases, res)
            return {"input.M": dM, "input.raw": dis.orthonormalize_backward(dQ, prm["input.raw"], bases)}
        return _Problem(prm, value, grads)

    if component == "pose_decoder":
        prm = subset("decoder.")
        prm["input.M_ortho"] = rng.standard_normal((B, T, cfg.d_motion))
        prior = 0.3 * rng.standard_normal((B, 2, nm.OUT_DIM))
        hd0 = 0.5 * rng.standard_normal((B, cfg.hidden))
        w = _scalarize(rng, (B, T, nm.OUT_DIM))

        def value():
            out, _, _ = nm.decoder_forward(p, prm["input.M_ortho"], cfg.window, hd0, prior)
            return float((w * out).sum())

        def grads():
            _, _, cache = nm.decoder_forward(p, prm["input.M_ortho"], cfg.window, hd0, prior)
            g, dMo, _ = nm.decoder_backward(p, cache, w)
            g["input.M_ortho"] = dMo
            return g
        return _Problem(prm, value, grads)

    if component == "anchor_embed":
        angles = rng.standard_normal((B * T, 24))
        w = _scalarize(rng, (B * T, cfg.d_motion))

        def value():
            return float((w * dis.anchor_embed(angles, p["anchor.W"], p["anchor.b"])).sum())

        def grads():
            _, cache = dis.anchor_embed_forward(angles, p["anchor.W"], p["anchor.b"])
            gW, gb = dis.anchor_embed_backward(w, cache)
            return {"anchor.W": gW, "anchor.b": gb}
        return _Problem(subset("anchor."), value, grads)

    if component == "losses":
        N, D = 6, 5
        prm = {"ortho.M_proj": rng.standard_normal((B, T, D)), "ortho.V": rng.standard_normal((B, T, D)),
               "align.anchor": rng.standard_normal((N, D)), "align.motion": rng.standard_normal((N, D))}
        tau = 0.3

        def value():
            lo = dis.loss_ortho(prm["ortho.M_proj"], prm["ortho.V"])[0]
            za, _ = L.l2_normalize_forward(prm["align.anchor"])
            zm, _ = L.l2_normalize_forward(prm["align.motion"])
            return lo + dis.loss_align(za, zm, tau)[0]

        def grads():
            _, dm, dv = dis.loss_ortho(prm["ortho.M_proj"], prm["ortho.V"])
            za, na = L.l2_normalize_forward(prm["align.anchor"])
            zm, nm_ = L.l2_normalize_forward(prm["align.motion"])
            _, dza, dzm = dis.loss_align(za, zm, tau)
            return {"ortho.M_proj": dm, "ortho.V": dv,
                    "align.anchor": L.l2_normalize_backward(dza, za, na),
                    "align.motion": L.l2_normalize_backward(dzm, zm, nm_)}
        return _Problem(prm, value, grads)

    if component == "full_model":
        model = PoseModel(cfg, p)
        batch = Batch(rng.standard_normal((B, T, nm.IN_DIM)), 0.3 * rng.standard_normal((B, T, nm.OUT_DIM)),
                      rng.standard_normal((B, T, 24)))
        mask_seed = int(rng.integers(1 << 30))
        kw = dict(alpha=0.7, beta=0.3, tau=0.5, ablation=AblationSpec())

        def value():
            return forward_backward(model, batch, rng=np.random.default_rng(mask_seed),
                                    grads=False, **kw)[0].l_total

        def grads():
            return forward_backward(model, batch, rng=np.random.default_rng(mask_seed), **kw)[0].grads
        return _Problem({k: p[k] for k in p}, value, grads)

    raise ValueError(f"unknown component {component!r}; choose from {COMPONENTS}")


def numeric_gradient(value: Callable[[], float], arr: np.ndarray, h: float) -> np.ndarray:
    """Five-point central differences, perturbing ``arr`` in place."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        step = h * max(1.0, abs(orig))
        vals = []
        for k in (1, -1, 2, -2):
            arr[idx] = orig + k * step
            vals.append(value())
        arr[idx] = orig
        out[idx] = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * step)
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = SCALE_FLOOR * max(np.abs(analytic).max(initial=0.0), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return np.abs(analytic - numeric) / denom


def grad_check(component: str, seed: int = 0, h: float | None = None, tol: float = 1e-5,
               corrupt: tuple[str, tuple, float] | None = None) -> GradCheckReport:
    """Compare analytic against numeric gradients for one component.

    ``corrupt=(name, index, factor)`` scales one analytic entry before the
    comparison (fault injection for testing the checker itself).
    """
    prob = _build(component, seed)
    h = prob.default_h if h is None else h
    analytic = prob.grads()
    if corrupt is not None:
        name, index, factor = corrupt
        analytic[name] = analytic[name].copy()
        analytic[name][index] *= factor
    worst, where, count = 0.0, None, 0
    for name, arr in prob.params.items():
        num = numeric_gradient(prob.value, arr, h)
        rel = relative_errors(analytic[name], num)
        count += rel.size
        idx = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else None
        if rel.size and rel[idx] > worst:
            worst = float(rel[idx])
            where = f"{name}[{', '.join(str(i) for i in idx)}]"
    return GradCheckReport(component, worst, where, tol, count)


def analytic_gradients(component: str, seed: int = 0) -> dict[str, np.ndarray]:
    return _build(component, seed).grads()


def run_all(seed: int = 0, tol: float = 1e-5, linear_tol: float = 1e-9,
            components=COMPONENTS) -> list[GradCheckReport]:
    return [grad_check(c, seed, tol=linear_tol if c == "linear" else tol) for c in components]
