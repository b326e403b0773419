"""Frame-by-frame inference with a fixed-size circular buffer and selective
flip refinement.

The persistent recurrent states and the buffered keypoints always come from
the unflipped input. When refinement fires, a second pass runs on the
mirrored keypoints from copies of those states, its output is mirrored back
and averaged with the plain output; the copies are then discarded.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .disentangle import PROJ_EPS
from .errors import EmptyPrototypes, InsufficientViews
from .evaluation import pa_mpjpe_per_frame
from .geometry import (NUM_JOINTS, Keypoints2D, Skeleton3D, body_frame_joints, horizontal_flip,
                       mirror_joints)
from .netcore import model as nm
from .pipeline import PoseModel

STAGES = ("encode", "viewfeat", "project", "decode", "flip_extra")


class RingBuffer:
    """W preallocated slots of (encoder state, decoder state, keypoints, view row)."""

    def __init__(self, capacity: int, enc_dim: int, dec_dim: int, kp_dim: int, view_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.enc_state = np.zeros((capacity, enc_dim))
        self.dec_state = np.zeros((capacity, dec_dim))
        self.keypoints = np.zeros((capacity, kp_dim))
        self.view = np.zeros((capacity, view_dim))
        self.cursor = 0
        self.count = 0
        self.pushes = 0

    @property
    def slot_count(self) -> int:
        return self.keypoints.shape[0]

    def push(self, enc_h, dec_h, kp_row, view_row) -> None:
        i = self.cursor
        self.enc_state[i] = enc_h
        self.dec_state[i] = dec_h
        self.keypoints[i] = kp_row
        self.view[i] = view_row
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        self.pushes += 1

    def order(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        start = (self.cursor - self.count) % self.capacity
        return (start + np.arange(self.count)) % self.capacity

    def recent_keypoints(self) -> list[np.ndarray]:
        return [self.keypoints[i] for i in self.order()]

    def frame_indices(self) -> np.ndarray:
        """Stream frame numbers currently held, oldest first."""
        return np.arange(self.pushes - self.count, self.pushes)

    def copy(self) -> "RingBuffer":
        other = RingBuffer.__new__(RingBuffer)
        other.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                               for k, v in self.__dict__.items()})
        return other


@dataclass
class RefinementPolicy:
    prototypes: np.ndarray
    theta_flip: float = 0.5
    hysteresis: float = 0.05
    sigma: float = 0.25
    hard_views: tuple[int, ...] = ()
    view_errors: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=np.float64))
        if not 0.0 <= self.theta_flip <= 1.0 or self.hysteresis < 0 or self.sigma <= 0:
            raise ValueError(f"invalid policy parameters {self.theta_flip}, {self.hysteresis}, {self.sigma}")

    def with_theta(self, theta: float) -> "RefinementPolicy":
        return RefinementPolicy(self.prototypes, theta, self.hysteresis, self.sigma,
                                self.hard_views, dict(self.view_errors))


def difficulty_score(v_row, policy: RefinementPolicy) -> float:
    """exp(-d^2 / sigma^2) with d the smallest cosine distance to a hard-view prototype."""
    protos = policy.prototypes
    if protos.size == 0:
        raise EmptyPrototypes("refinement policy has no prototypes")
    v = np.asarray(v_row, dtype=np.float64).ravel()
    vn = np.linalg.norm(v)
    pn = np.linalg.norm(protos, axis=1)
    cos = (protos @ v) / np.maximum(pn * vn, 1e-300)
    d = 1.0 - np.clip(cos, -1.0, 1.0)
    d_min = float(d.min())
    return float(np.exp(-(d_min * d_min) / (policy.sigma * policy.sigma)))


def decide_flip(score: float, policy: RefinementPolicy, was_active: bool) -> bool:
    if policy.theta_flip <= 0.0:
        return True
    if policy.theta_flip >= 1.0:
        return False
    if was_active:
        return score >= policy.theta_flip - policy.hysteresis
    return score > policy.theta_flip


@dataclass
class StreamState:
    enc_h: np.ndarray
    dec_h: np.ndarray
    buffer: RingBuffer
    policy: RefinementPolicy | None
    image_size: tuple[int, int]
    frame: int = 0
    flip_active: bool = False
    passes: int = 0          # motion-encoder + decoder passes executed so far


@dataclass
class FrameResult:
    refined: Skeleton3D
    flip_activated: bool
    difficulty: float
    latency_ns: dict[str, int] = field(default_factory=dict)
    plain: np.ndarray | None = None      # unflipped output (J, 3)
    view_row: np.ndarray | None = None

    @property
    def total_ns(self) -> int:
        return sum(self.latency_ns.values())


class StreamingEngine:
    def __init__(self, model: PoseModel, policy: RefinementPolicy | None = None,
                 window: int | None = None, use_projection: bool = True):
        self.model = model
        self.policy = policy
        self.window = window or model.cfg.window
        self.use_projection = use_projection

    def new_state(self, image_size=(1280, 720)) -> StreamState:
        p, cfg = self.model.params, self.model.cfg
        H = p["motion.Wh"].shape[0]
        Hd = p["decoder.Wh"].shape[0]
        buf = RingBuffer(self.window, H, Hd, nm.OUT_DIM, cfg.d_view)
        return StreamState(np.zeros((1, H)), np.zeros((1, Hd)), buf, self.policy,
                           tuple(image_size))

    # -- one inference pass --------------------------------------------------
    def _pass(self, state: StreamState, kp: Keypoints2D, mirrored_context: bool, timings=None):
        p, cfg = self.model.params, self.model.cfg
        clock = time.perf_counter_ns
        t0 = clock()
        x = nm.encode_keypoints(kp, state.image_size).reshape(1, -1)
        m, k3d, enc_h = nm.motion_step(p, x, state.enc_h)
        t1 = clock()
        V = nm.view_embed(p, k3d)
        t2 = clock()
        if self.use_projection:
            raw = nm.basis_forward(p, V, cfg.n_bases)
            Q, _ = kernels.mgs_orthonormalize(raw)
            mo, _ = kernels.deflate(m, Q, PROJ_EPS)
        else:
            mo = m
        t3 = clock()
        ctx = nm.context_summary(state.buffer.recent_keypoints())
        if ctx is not None and mirrored_context:
            ctx = mirror_joints(ctx.reshape(NUM_JOINTS, 3)).reshape(-1)
        out, dec_h = nm.decoder_step(p, mo, None if ctx is None else ctx[None], state.dec_h)
        t4 = clock()
        state.passes += 1
        if timings is not None:
            timings["encode"] += t1 - t0
            timings["viewfeat"] += t2 - t1
            timings["project"] += t3 - t2
            timings["decode"] += t4 - t3
        return out[0], enc_h, dec_h, V[0]

    def flip_refine(self, state: StreamState, kp: Keypoints2D, image_width: int | None = None):
        """Average of the plain pass and the mirrored-back pass on the flipped input.

        Leaves ``state``'s recurrent states and buffer untouched.
        """
        width = image_width or state.image_size[0]
        plain, _, _, _ = self._pass(state, kp, mirrored_context=False)
        flipped, _, _, _ = self._pass(state, horizontal_flip(kp, width), mirrored_context=True)
        return 0.5 * (plain.reshape(NUM_JOINTS, 3) + mirror_joints(flipped.reshape(NUM_JOINTS, 3)))

    def push_frame(self, state: StreamState, kp: Keypoints2D,
                   image_width: int | None = None) -> FrameResult:
        width = image_width or state.image_size[0]
        timings = dict.fromkeys(STAGES, 0)
        plain, enc_h, dec_h, v_row = self._pass(state, kp, False, timings)
        t0 = time.perf_counter_ns()
        if state.policy is not None:
            score = difficulty_score(v_row, state.policy)
            active = decide_flip(score, state.policy, state.flip_active)
        else:
            score, active = 0.0, False
        timings["viewfeat"] += time.perf_counter_ns() - t0
        refined = plain.reshape(NUM_JOINTS, 3)
        if active:
            t0 = time.perf_counter_ns()
            flipped, _, _, _ = self._pass(state, horizontal_flip(kp, width), True)
            refined = 0.5 * (refined + mirror_joints(flipped.reshape(NUM_JOINTS, 3)))
            timings["flip_extra"] = time.perf_counter_ns() - t0
        # persistent state advances with the unflipped pass only
        state.enc_h, state.dec_h = enc_h, dec_h
        state.buffer.push(enc_h[0], dec_h[0], plain, v_row)
        state.flip_active = active
        state.frame += 1
        return FrameResult(Skeleton3D(refined, "body"), active, score, timings,
                           plain.reshape(NUM_JOINTS, 3), v_row)

    def run_stream(self, kps: Keypoints2D, image_size=(1280, 720)):
        state = self.new_state(image_size)
        return state, [self.push_frame(state, kps.frame(t)) for t in range(len(kps))]


def run_batch(model: PoseModel, kps: Keypoints2D, image_size=(1280, 720),
              use_projection: bool = True) -> dict[str, np.ndarray]:
    """Whole-sequence inference with the streaming path's per-frame arithmetic."""
    p, cfg = model.params, model.cfg
    X = nm.encode_keypoints(kps, image_size)
    T = X.shape[0]
    H = p["motion.Wh"].shape[0]
    hs = np.empty((T, H))
    h = np.zeros((1, H))
    for t in range(T):
        h = kernels.gru_step(X[t:t + 1], h, p["motion.Wx"], p["motion.Wh"], p["motion.b"])
        hs[t] = h[0]
    M = hs @ p["motion.Wm"] + p["motion.bm"]
    K = hs @ p["motion.Wk"] + p["motion.bk"]
    V = nm.view_embed(p, K)
    if use_projection:
        raw = nm.basis_forward(p, V, cfg.n_bases)
        Q, _ = kernels.mgs_orthonormalize(raw)
        Mo, _ = kernels.deflate(M, Q, PROJ_EPS)
    else:
        Mo = M
    Hd = p["decoder.Wh"].shape[0]
    hd = np.zeros((1, Hd))
    out = np.empty((T, nm.OUT_DIM))
    history: list[np.ndarray] = []
    for t in range(T):
        ctx = nm.context_summary(history[max(0, len(history) - cfg.window):])
        o, hd = nm.decoder_step(p, Mo[t:t + 1], None if ctx is None else ctx[None], hd)
        out[t] = o[0]
        history.append(out[t])
    return {"refined": out.reshape(T, NUM_JOINTS, 3), "coarse": K.reshape(T, NUM_JOINTS, 3),
            "view": V, "m_init": M, "m_ortho": Mo}


def oracle_batch(model: PoseModel, kps: Keypoints2D, image_size=(1280, 720)) -> np.ndarray:
    return run_batch(model, kps, image_size)["refined"]


def calibrate_prototypes(model: PoseModel, validation, n_hard: int, theta_flip: float = 0.5,
                         hysteresis: float = 0.05, sigma: float = 0.25) -> RefinementPolicy:
    """Prototypes are the mean view embeddings of the ``n_hard`` worst views by PA-MPJPE."""
    if not validation:
        raise ValueError("validation set is empty")
    errors: dict[int, list[float]] = {}
    embeds: dict[int, list[np.ndarray]] = {}
    for sample in validation:
        for view in sample.views:
            res = run_batch(model, view.keypoints, view.camera.image_size)
            gt = body_frame_joints(sample.clip)
            errors.setdefault(view.view_id, []).extend(pa_mpjpe_per_frame(res["refined"], gt))
            embeds.setdefault(view.view_id, []).append(res["view"])
    if len(errors) < n_hard:
        raise InsufficientViews(f"{len(errors)} distinct views, {n_hard} requested")
    ranked = sorted(errors, key=lambda vid: (-float(np.mean(errors[vid])), vid))
    hard = ranked[:n_hard]
    protos = np.stack([np.concatenate(embeds[vid]).mean(axis=0) for vid in hard])
    return RefinementPolicy(protos, theta_flip, hysteresis, sigma, tuple(hard),
                            {vid: float(np.mean(errors[vid])) for vid in ranked})
