"""Full model: parameters plus the batched training forward/backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disentangle import (LossReport, anchor_embed_backward, anchor_embed_forward, loss_align,
                          loss_ortho, ortho_project, ortho_project_backward, orthonormalize_backward,
                          orthonormalize_bases, total_loss)
from .geometry import NUM_JOINTS, PELVIS, MultiViewSample, body_frame_joints
from .netcore import model as nm
from .netcore.layers import l2_normalize_backward, l2_normalize_forward
from .netcore.params import ParamStore
from .viewfeat import view_features, view_features_backward


@dataclass(frozen=True)
class AblationSpec:
    disable_projection: bool = False
    disable_ortho_loss: bool = False
    disable_align_loss: bool = False

    @property
    def name(self) -> str:
        parts = [n for n, on in (("no-projection", self.disable_projection),
                                 ("no-ortho", self.disable_ortho_loss),
                                 ("no-align", self.disable_align_loss)) if on]
        return "+".join(parts) or "full"

    @classmethod
    def parse(cls, text: str | None) -> "AblationSpec":
        flags = {"no-projection": "disable_projection", "no-ortho": "disable_ortho_loss",
                 "no-align": "disable_align_loss"}
        if not text or text == "full":
            return cls()
        kwargs = {}
        for part in text.replace(",", "+").split("+"):
            part = part.strip()
            if part not in flags:
                raise ValueError(f"unknown ablation {part!r}; choose from {sorted(flags)} or 'full'")
            kwargs[flags[part]] = True
        return cls(**kwargs)


@dataclass
class Batch:
    X: np.ndarray        # (B, T, 3J) encoded keypoints
    gt: np.ndarray       # (B, T, 3J) root-relative camera-frame joints, coarse target
    canon: np.ndarray    # (B, T, 24)
    body: np.ndarray | None = None   # (B, T, 3J) root-relative body-frame joints, refined target

    @property
    def refined_target(self) -> np.ndarray:
        return self.gt if self.body is None else self.body


class PoseModel:
    def __init__(self, cfg: nm.EncoderConfig, params: ParamStore):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: nm.EncoderConfig | None = None, seed: int = 0) -> "PoseModel":
        cfg = cfg or nm.EncoderConfig()
        return cls(cfg, nm.init_params(cfg, seed))

    def copy(self) -> "PoseModel":
        return PoseModel(self.cfg, self.params.copy())


def root_relative(joints: np.ndarray) -> np.ndarray:
    return joints - joints[..., PELVIS:PELVIS + 1, :]


def view_batch(sample: MultiViewSample, view_index: int) -> Batch:
    v = sample.views[view_index]
    X = nm.encode_keypoints(v.keypoints, v.camera.image_size)
    T = v.joints_cam.shape[0]
    gt = root_relative(v.joints_cam).reshape(T, -1)
    body = body_frame_joints(sample.clip).reshape(T, -1)
    return Batch(X[None], gt[None], sample.clip.canon[None], body[None])


def stack_batches(batches) -> Batch:
    body = None if any(b.body is None for b in batches) else np.concatenate([b.body for b in batches])
    return Batch(np.concatenate([b.X for b in batches]), np.concatenate([b.gt for b in batches]),
                 np.concatenate([b.canon for b in batches]), body)


@dataclass
class ForwardOutputs:
    m_init: np.ndarray
    k3d: np.ndarray
    view: np.ndarray
    m_ortho: np.ndarray
    refined: np.ndarray


def forward_backward(model: PoseModel, batch: Batch, *, alpha: float = 0.1, beta: float = 0.1,
                     tau: float = 0.07, ablation: AblationSpec = AblationSpec(), rng=None,
                     grads: bool = True) -> tuple[LossReport, ForwardOutputs]:
    """One training pass. ``rng`` enables dropout; ``None`` is evaluation mode.

    The coarse keypoints are supervised in the camera frame (the view branch
    reads them); the refined output against ``batch.refined_target``.

    Disabled loss terms are still evaluated for logging but carry zero weight.
    """
    p, cfg = model.params, model.cfg
    X, gt, canon = batch.X, batch.gt, batch.canon
    B, T, _ = X.shape
    a_w = 0.0 if ablation.disable_ortho_loss else alpha
    b_w = 0.0 if ablation.disable_align_loss else beta

    M, K, _, mcache = nm.motion_forward(p, X)
    F = view_features(K.reshape(B, T, NUM_JOINTS, 3))
    V, vcache = nm.view_forward(p, F, cfg.dropout, rng)
    if ablation.disable_projection:
        Mo = M
    else:
        raw = nm.basis_forward(p, V, cfg.n_bases)
        bases = orthonormalize_bases(raw)
        proj = ortho_project(M, bases)
        Mo = proj.m_proj
    out, _, dcache = nm.decoder_forward(p, Mo, cfg.window)

    n_joint = B * T * NUM_JOINTS
    err_k = K - gt
    err_o = out - batch.refined_target
    l_pose = float(((err_k * err_k).sum() + (err_o * err_o).sum()) / n_joint)
    l_ortho, dMo_ortho, dV_ortho = loss_ortho(Mo, V)
    D = Mo.shape[-1]
    zM, normM = l2_normalize_forward(Mo.reshape(-1, D))
    zA, acache = anchor_embed_forward(canon.reshape(-1, canon.shape[-1]),
                                      p["anchor.W"], p["anchor.b"])
    l_align, dzA, dzM = loss_align(zA, zM, tau)
    report = total_loss(l_pose, l_ortho, l_align, a_w, b_w)
    outputs = ForwardOutputs(M, K, V, Mo, out)
    if not grads:
        return report, outputs

    dK = (2.0 / n_joint) * err_k
    dout = (2.0 / n_joint) * err_o
    dMo = a_w * dMo_ortho + b_w * l2_normalize_backward(dzM, zM, normM).reshape(Mo.shape)
    dV = a_w * dV_ortho

    g: dict[str, np.ndarray] = {}
    g_dec, dMo_dec, _ = nm.decoder_backward(p, dcache, dout)
    g.update(g_dec)
    dMo = dMo + dMo_dec
    if ablation.disable_projection:
        dM = dMo
        g["basis.W"] = np.zeros_like(p["basis.W"])
        g["basis.b"] = np.zeros_like(p["basis.b"])
    else:
        dM, dQ = ortho_project_backward(dMo, M, bases, proj)
        draw = orthonormalize_backward(dQ, raw, bases)
        g_basis, dV_basis = nm.basis_backward(p, V, draw)
        g.update(g_basis)
        dV = dV + dV_basis
    g_view, dF = nm.view_backward(p, vcache, dV)
    g.update(g_view)
    dK = dK + view_features_backward(dF).reshape(dK.shape)
    g_motion, _, _ = nm.motion_backward(p, mcache, dM, dK)
    g.update(g_motion)
    gW, gb = anchor_embed_backward(b_w * dzA, acache)
    g["anchor.W"], g["anchor.b"] = gW, gb
    report.grads = {name: g[name] for name in p.names()}
    return report, outputs


def infer(model: PoseModel, X: np.ndarray, *, use_projection: bool = True,
          k3d_noise: np.ndarray | None = None) -> ForwardOutputs:
    """Batched evaluation-mode forward pass over ``X`` (B, T, 3J).

    ``k3d_noise`` (B, T, 3J), when given, is added to the coarse keypoints
    before they feed the view branch.
    """
    p, cfg = model.params, model.cfg
    B, T, _ = X.shape
    M, K, _, _ = nm.motion_forward(p, X)
    if k3d_noise is not None:
        K = K + k3d_noise
    V, _ = nm.view_forward(p, view_features(K.reshape(B, T, NUM_JOINTS, 3)))
    if use_projection:
        bases = orthonormalize_bases(nm.basis_forward(p, V, cfg.n_bases))
        Mo = ortho_project(M, bases).m_proj
    else:
        Mo = M
    out, _, _ = nm.decoder_forward(p, Mo, cfg.window)
    return ForwardOutputs(M, K, V, Mo, out)
