"""Skeleton and camera types, synthetic multi-view motion clips, and dataset IO.

Conventions
-----------
World and camera frames are right-handed with +y up. In the camera frame +z
points into the scene, so a visible joint has positive depth. Image
coordinates grow with camera x and y (``u = f*x/z + cx``, ``v = f*y/z + cy``).

The body frame used by forward kinematics has +x towards the subject's left,
+y up and +z forward. Every motion kind walks/faces along world +x.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import NonPositiveDepth, ShapeMismatch

FPS = 30.0
NUM_JOINTS = 17
NUM_ANGLES = 24
SCHEMA_VERSION = 1

JOINT_NAMES = (
    "pelvis",
    "hip_R", "knee_R", "ankle_R",
    "hip_L", "knee_L", "ankle_L",
    "spine", "thorax", "neck", "head",
    "shoulder_L", "elbow_L", "wrist_L",
    "shoulder_R", "elbow_R", "wrist_R",
)

ANGLE_NAMES = (
    "spine_flex", "spine_lat", "spine_twist", "thorax_flex", "thorax_lat",
    "neck_flex", "neck_lat", "head_flex",
    "hip_L_flex", "hip_L_abd", "hip_L_twist", "knee_L_flex",
    "hip_R_flex", "hip_R_abd", "hip_R_twist", "knee_R_flex",
    "shoulder_L_flex", "shoulder_L_abd", "shoulder_L_twist", "elbow_L_flex",
    "shoulder_R_flex", "shoulder_R_abd", "shoulder_R_twist", "elbow_R_flex",
)
_A = {name: i for i, name in enumerate(ANGLE_NAMES)}

MOTION_KINDS = ("walk", "jog", "squat", "bend", "hop", "mixed")


@dataclass(frozen=True)
class JointSchema:
    names: tuple[str, ...]
    lr_pairs: tuple[tuple[int, int], ...]

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def key_joints(self) -> tuple[int, int, int, int]:
        """Indices of hip_L, hip_R, shoulder_L, shoulder_R."""
        return (self.index("hip_L"), self.index("hip_R"),
                self.index("shoulder_L"), self.index("shoulder_R"))

    @property
    def mirror_permutation(self) -> np.ndarray:
        """Index array mapping each joint to its left/right partner."""
        perm = np.arange(len(self.names))
        for left, right in self.lr_pairs:
            perm[left], perm[right] = right, left
        return perm

    @property
    def midline(self) -> tuple[int, ...]:
        paired = {j for pair in self.lr_pairs for j in pair}
        return tuple(i for i in range(len(self.names)) if i not in paired)


def _default_schema() -> JointSchema:
    names = JOINT_NAMES
    pairs = []
    for i, name in enumerate(names):
        if name.endswith("_L"):
            pairs.append((i, names.index(name[:-2] + "_R")))
    return JointSchema(names=names, lr_pairs=tuple(pairs))


SCHEMA = _default_schema()
HIP_L, HIP_R, SHOULDER_L, SHOULDER_R = SCHEMA.key_joints
PELVIS = SCHEMA.index("pelvis")
ANKLE_L, ANKLE_R = SCHEMA.index("ankle_L"), SCHEMA.index("ankle_R")


@dataclass(frozen=True)
class Skeleton3D:
    """J joints in meters. ``joints`` may carry leading batch/time axes."""

    joints: np.ndarray
    frame_tag: str = "world"

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape[-2:] != (NUM_JOINTS, 3):
            raise ShapeMismatch(f"expected (..., {NUM_JOINTS}, 3) joints, got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("skeleton has non-finite coordinates")
        if self.frame_tag not in ("world", "camera", "body"):
            raise ValueError(f"unknown frame tag {self.frame_tag!r}")
        object.__setattr__(self, "joints", joints)

    @property
    def hip_L(self) -> np.ndarray:
        return self.joints[..., HIP_L, :]

    @property
    def hip_R(self) -> np.ndarray:
        return self.joints[..., HIP_R, :]

    @property
    def shoulder_L(self) -> np.ndarray:
        return self.joints[..., SHOULDER_L, :]

    @property
    def shoulder_R(self) -> np.ndarray:
        return self.joints[..., SHOULDER_R, :]


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float = 0.0
    distance: float = 4.0
    focal_px: float = 1000.0
    principal_point: tuple[float, float] = (640.0, 360.0)
    image_size: tuple[int, int] = (1280, 720)

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(self.azimuth) % (2 * math.pi))
        if not -math.pi / 2 <= self.elevation <= math.pi / 2:
            raise ValueError("elevation must lie in [-pi/2, pi/2]")
        if self.distance <= 0 or self.focal_px <= 0:
            raise ValueError("distance and focal_px must be positive")

    @property
    def rotation(self) -> np.ndarray:
        """Azimuth about world +y, then elevation about the lateral x axis."""
        ca, sa = math.cos(self.azimuth), math.sin(self.azimuth)
        ce, se = math.cos(self.elevation), math.sin(self.elevation)
        r_az = np.array([[ca, 0.0, sa], [0.0, 1.0, 0.0], [-sa, 0.0, ca]])
        r_el = np.array([[1.0, 0.0, 0.0], [0.0, ce, -se], [0.0, se, ce]])
        return r_el @ r_az

    def to_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "focal_px": self.focal_px,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(
            azimuth=d["azimuth"],
            elevation=d["elevation"],
            distance=d["distance"],
            focal_px=d["focal_px"],
            principal_point=tuple(d["principal_point"]),
            image_size=tuple(int(v) for v in d["image_size"]),
        )


@dataclass(frozen=True)
class Keypoints2D:
    """Pixel coordinates (..., J, 2) and confidences (..., J)."""

    points: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if points.shape[-2:] != (NUM_JOINTS, 2) or conf.shape != points.shape[:-1]:
            raise ShapeMismatch(f"bad keypoint shapes {points.shape} / {conf.shape}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "confidence", conf)

    def __len__(self) -> int:
        return self.points.shape[0] if self.points.ndim == 3 else 1

    def frame(self, t: int) -> "Keypoints2D":
        return Keypoints2D(self.points[t], self.confidence[t])


@dataclass(frozen=True)
class CanonicalPose:
    angles: np.ndarray
    root_free: bool = True

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        if angles.shape[-1] != NUM_ANGLES:
            raise ShapeMismatch(f"expected {NUM_ANGLES} angles, got {angles.shape}")
        object.__setattr__(self, "angles", angles)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_px: float = 0.0
    p_occ: float = 0.0

    def __post_init__(self):
        if self.sigma_px < 0 or not 0.0 <= self.p_occ <= 1.0:
            raise ValueError(f"invalid noise spec {self}")


@dataclass(frozen=True)
class MotionClip:
    frames: np.ndarray          # (T, J, 3) world frame
    canon: np.ndarray           # (T, NUM_ANGLES)
    motion_id: str
    seed: int

    def __post_init__(self):
        if self.frames.shape[0] < 2 or self.frames.shape[0] != self.canon.shape[0]:
            raise ShapeMismatch("clip needs T >= 2 frames with matching canonical poses")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def skeleton(self, t: int) -> Skeleton3D:
        return Skeleton3D(self.frames[t], "world")

    def canonical(self, t: int) -> CanonicalPose:
        return CanonicalPose(self.canon[t])


@dataclass(frozen=True)
class RenderedView:
    view_id: int
    camera: CameraPose
    keypoints: Keypoints2D      # (T, J, 2) / (T, J)
    joints_cam: np.ndarray      # (T, J, 3) camera frame


@dataclass(frozen=True)
class MultiViewSample:
    clip: MotionClip
    views: tuple[RenderedView, ...]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    noise_seed: int = 0
    sample_id: int = 0


# ---------------------------------------------------------------------------
# camera geometry

def transform_points(points: np.ndarray, cam: CameraPose,
                     center: np.ndarray | None = None) -> np.ndarray:
    """Rigidly map world points (..., 3) into the camera frame of ``cam``."""
    pts = np.asarray(points, dtype=np.float64)
    if center is not None:
        pts = pts - np.asarray(center, dtype=np.float64)
    out = pts @ cam.rotation.T
    out[..., 2] += cam.distance
    return out


def world_to_camera(s: Skeleton3D, cam: CameraPose,
                    center: np.ndarray | None = None) -> Skeleton3D:
    if s.frame_tag != "world":
        raise ValueError("world_to_camera expects a world-frame skeleton")
    return Skeleton3D(transform_points(s.joints, cam, center), "camera")


def project_points(joints_cam: np.ndarray, cam: CameraPose) -> np.ndarray:
    z = joints_cam[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"min depth {float(z.min()):.4g} m; camera is behind the subject")
    cx, cy = cam.principal_point
    u = cam.focal_px * joints_cam[..., 0] / z + cx
    v = cam.focal_px * joints_cam[..., 1] / z + cy
    return np.stack([u, v], axis=-1)


def project_perspective(s: Skeleton3D, cam: CameraPose) -> Keypoints2D:
    pts = project_points(s.joints, cam)
    return Keypoints2D(pts, np.ones(pts.shape[:-1]))


def mm_to_px(sigma_mm: float, cam: CameraPose) -> float:
    """Pixel noise equivalent to ``sigma_mm`` at the subject's distance."""
    return cam.focal_px * (sigma_mm / 1000.0) / cam.distance


def camera_grid(n_azimuth: int = 8, elevations: Sequence[float] = (0.0, math.radians(30)),
                distance: float = 4.0, focal_px: float = 1000.0,
                image_size: tuple[int, int] = (1280, 720)) -> list[CameraPose]:
    """Cameras on an azimuth ring (45 degree spacing for 8) at each elevation."""
    w, h = image_size
    cams = []
    for elev in elevations:
        for i in range(n_azimuth):
            cams.append(CameraPose(2 * math.pi * i / n_azimuth, elev, distance, focal_px,
                                   ((w - 1) / 2.0, (h - 1) / 2.0), image_size))
    return cams


def horizontal_flip(kp: Keypoints2D, image_width: int,
                    schema: JointSchema = SCHEMA) -> Keypoints2D:
    perm = schema.mirror_permutation
    pts = kp.points[..., perm, :].copy()
    pts[..., 0] = image_width - 1 - pts[..., 0]
    return Keypoints2D(pts, kp.confidence[..., perm].copy())


def mirror_joints(joints: np.ndarray, schema: JointSchema = SCHEMA) -> np.ndarray:
    """Negate camera x and swap left/right joints (3D counterpart of the flip)."""
    out = joints[..., schema.mirror_permutation, :].copy()
    out[..., 0] = -out[..., 0]
    return out


# ---------------------------------------------------------------------------
# forward kinematics

def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


_BONES = {
    # child: (parent, rest offset in the parent's local frame)
    "hip_L": ("pelvis", (0.10, 0.0, 0.0)),
    "hip_R": ("pelvis", (-0.10, 0.0, 0.0)),
    "knee_L": ("hip_L", (0.0, -0.45, 0.0)),
    "knee_R": ("hip_R", (0.0, -0.45, 0.0)),
    "ankle_L": ("knee_L", (0.0, -0.43, 0.0)),
    "ankle_R": ("knee_R", (0.0, -0.43, 0.0)),
    "spine": ("pelvis", (0.0, 0.22, 0.0)),
    "thorax": ("spine", (0.0, 0.25, 0.0)),
    "neck": ("thorax", (0.0, 0.10, 0.0)),
    "head": ("neck", (0.0, 0.15, 0.0)),
    "shoulder_L": ("thorax", (0.17, -0.02, 0.0)),
    "shoulder_R": ("thorax", (-0.17, -0.02, 0.0)),
    "elbow_L": ("shoulder_L", (0.0, -0.28, 0.0)),
    "elbow_R": ("shoulder_R", (0.0, -0.28, 0.0)),
    "wrist_L": ("elbow_L", (0.0, -0.25, 0.0)),
    "wrist_R": ("elbow_R", (0.0, -0.25, 0.0)),
}
_FK_ORDER = ("hip_L", "hip_R", "knee_L", "knee_R", "ankle_L", "ankle_R", "spine", "thorax",
             "neck", "head", "shoulder_L", "shoulder_R", "elbow_L", "elbow_R", "wrist_L", "wrist_R")


def _local_rotations(q: np.ndarray) -> dict[str, np.ndarray]:
    """Rotation applied at each joint to its children's offsets."""
    a = lambda name: q[..., _A[name]]
    rot = {
        "pelvis": _ry(np.zeros_like(q[..., 0])),
        "spine": _rx(a("spine_flex")) @ _rz(a("spine_lat")) @ _ry(a("spine_twist")),
        "thorax": _rx(a("thorax_flex")) @ _rz(a("thorax_lat")),
        "neck": _rx(a("neck_flex")) @ _rz(a("neck_lat")),
        "head": _rx(a("head_flex")),
    }
    for side, sign in (("L", 1.0), ("R", -1.0)):
        rot[f"hip_{side}"] = (_rx(-a(f"hip_{side}_flex")) @ _rz(sign * a(f"hip_{side}_abd"))
                              @ _ry(sign * a(f"hip_{side}_twist")))
        rot[f"knee_{side}"] = _rx(a(f"knee_{side}_flex"))
        rot[f"shoulder_{side}"] = (_rx(-a(f"shoulder_{side}_flex"))
                                   @ _rz(sign * a(f"shoulder_{side}_abd"))
                                   @ _ry(sign * a(f"shoulder_{side}_twist")))
        rot[f"elbow_{side}"] = _rx(-a(f"elbow_{side}_flex"))
    return rot


def forward_kinematics(angles: np.ndarray, bone_scale: float = 1.0) -> np.ndarray:
    """Body-frame joints (..., J, 3) with the pelvis at the origin."""
    q = np.asarray(angles, dtype=np.float64)
    lead = q.shape[:-1]
    local = _local_rotations(q)
    glob = {"pelvis": local["pelvis"]}
    pos = {"pelvis": np.zeros(lead + (3,))}
    for child in _FK_ORDER:
        parent, offset = _BONES[child]
        off = bone_scale * np.asarray(offset)
        pos[child] = pos[parent] + glob[parent] @ off
        glob[child] = glob[parent] @ local.get(child, _ry(np.zeros(lead)))
    return np.stack([pos[name] for name in JOINT_NAMES], axis=-2)


# ---------------------------------------------------------------------------
# synthetic motion

def _wave(t, freq, phase):
    return np.sin(2 * np.pi * freq * t + phase)


def _kind_angles(kind: str, t: np.ndarray, rng: np.random.Generator):
    """Sinusoidal joint angles (T, 24) and forward speed (m/s) for one kind."""
    amp = rng.uniform(0.8, 1.2)
    freq = rng.uniform(0.85, 1.15)
    phase = rng.uniform(0.0, 2 * np.pi)
    q = np.zeros((t.size, NUM_ANGLES))

    def put(name, base, a=0.0, f=1.0, ph=0.0):
        q[:, _A[name]] = base + amp * a * _wave(t, freq * f, phase + ph)

    if kind in ("walk", "jog"):
        big = 1.0 if kind == "walk" else 1.6
        f = 0.9 if kind == "walk" else 1.4
        put("hip_L_flex", 0.05, 0.40 * big, f)
        put("hip_R_flex", 0.05, 0.40 * big, f, np.pi)
        put("knee_L_flex", 0.35 * big, 0.30 * big, f, -np.pi / 2)
        put("knee_R_flex", 0.35 * big, 0.30 * big, f, np.pi / 2)
        put("shoulder_L_flex", 0.0, 0.30 * big, f, np.pi)
        put("shoulder_R_flex", 0.0, 0.30 * big, f)
        put("shoulder_L_abd", 0.12)
        put("shoulder_R_abd", 0.12)
        put("elbow_L_flex", 0.3 * big, 0.15, f)
        put("elbow_R_flex", 0.3 * big, 0.15, f, np.pi)
        put("spine_twist", 0.0, 0.08, f)
        put("spine_flex", 0.05 * big)
        put("head_flex", 0.05, 0.03, 2 * f)
        speed = (1.2 if kind == "walk" else 2.6) * amp
    elif kind == "squat":
        put("hip_L_flex", 0.65, 0.6, 0.4)
        put("hip_R_flex", 0.65, 0.6, 0.4)
        put("knee_L_flex", 1.2, 1.1, 0.4)
        put("knee_R_flex", 1.2, 1.1, 0.4)
        put("spine_flex", 0.35, 0.3, 0.4)
        put("shoulder_L_flex", 0.9, 0.5, 0.4)
        put("shoulder_R_flex", 0.9, 0.5, 0.4)
        put("hip_L_abd", 0.15)
        put("hip_R_abd", 0.15)
        speed = 0.0
    elif kind == "bend":
        put("spine_flex", 0.6, 0.55, 0.35)
        put("thorax_flex", 0.3, 0.25, 0.35)
        put("hip_L_flex", 0.3, 0.25, 0.35)
        put("hip_R_flex", 0.3, 0.25, 0.35)
        put("knee_L_flex", 0.15, 0.1, 0.35)
        put("knee_R_flex", 0.15, 0.1, 0.35)
        put("shoulder_L_flex", 0.7, 0.6, 0.35)
        put("shoulder_R_flex", 0.7, 0.6, 0.35)
        put("neck_flex", -0.2, 0.15, 0.35)
        put("spine_lat", 0.0, 0.1, 0.2)
        speed = 0.0
    elif kind == "hop":
        put("hip_L_flex", 0.7, 0.1, 1.3)
        put("knee_L_flex", 1.3, 0.1, 1.3)
        put("hip_R_flex", 0.25, 0.25, 1.3)
        put("knee_R_flex", 0.45, 0.40, 1.3, -np.pi / 2)
        put("shoulder_L_abd", 0.6, 0.2, 1.3)
        put("shoulder_R_abd", 0.6, 0.2, 1.3)
        put("elbow_L_flex", 0.4)
        put("elbow_R_flex", 0.4)
        put("spine_lat", 0.12, 0.05, 1.3)
        put("neck_lat", -0.1)
        speed = 0.4 * amp
    else:
        raise ValueError(f"unknown motion kind {kind!r}")
    return q, speed, freq


def _heading() -> np.ndarray:
    # body forward (+z) faces world +x
    return _ry(np.array(np.pi / 2))


def body_frame_joints(clip: MotionClip) -> np.ndarray:
    """Pelvis-relative joints in the subject's own frame (x left, y up, z forward).

    View independent: the same array for every camera rendering the clip.
    """
    rel = clip.frames - clip.frames[:, PELVIS:PELVIS + 1, :]
    return rel @ _heading()


def synth_motion(kind: str, T: int, seed: int) -> MotionClip:
    """Deterministic clip of ``T`` frames at 30 fps."""
    if T < 2:
        raise ValueError("a clip needs at least 2 frames")
    if kind not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), MOTION_KINDS.index(kind)]))
    t = np.arange(T) / FPS
    if kind == "mixed":
        weights = rng.dirichlet(np.ones(5))
        q = np.zeros((T, NUM_ANGLES))
        speed = 0.0
        for w, k in zip(weights, MOTION_KINDS[:5]):
            qk, sk, _ = _kind_angles(k, t, rng)
            q += w * qk
            speed += w * sk
    else:
        q, speed, _ = _kind_angles(kind, t, rng)
    bone_scale = rng.uniform(0.92, 1.08)

    body = forward_kinematics(q, bone_scale)
    # ground the lowest foot
    floor = np.minimum(body[:, ANKLE_L, 1], body[:, ANKLE_R, 1])
    body[:, :, 1] -= floor[:, None]
    if kind == "hop":
        body[:, :, 1] += 0.08 * np.abs(np.sin(2 * np.pi * 1.3 * t))[:, None]
    world = body @ _heading().T
    world[:, :, 0] += (speed * t)[:, None]
    return MotionClip(world, q, kind, int(seed))


# ---------------------------------------------------------------------------
# multi-view rendering

def _noise_rng(seed: int, view: int, salt: int) -> np.random.Generator:
    # Philox is counter based; keying on structural indices keeps every view independent
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), view, salt])))


def clip_center(clip: MotionClip) -> np.ndarray:
    center = clip.frames[:, PELVIS, :].mean(axis=0).copy()
    center[1] = clip.frames[:, :, 1].mean()
    return center


def render_views(clip: MotionClip, cams: Sequence[CameraPose],
                 noise: NoiseSpec | None = None, seed: int = 0,
                 sample_id: int = 0, view_ids: Sequence[int] | None = None) -> MultiViewSample:
    if not cams:
        raise ValueError("render_views needs at least one camera")
    noise = noise or NoiseSpec()
    view_ids = list(range(len(cams))) if view_ids is None else list(view_ids)
    center = clip_center(clip)
    views = []
    for vid, cam in zip(view_ids, cams):
        joints_cam = transform_points(clip.frames, cam, center)
        pts = project_points(joints_cam, cam)
        conf = np.ones(pts.shape[:-1])
        if noise.sigma_px > 0:
            pts = pts + noise.sigma_px * _noise_rng(seed, vid, 0).standard_normal(pts.shape)
        if noise.p_occ > 0:
            dropped = _noise_rng(seed, vid, 1).random(conf.shape) < noise.p_occ
            conf[dropped] = 0.0
        views.append(RenderedView(vid, cam, Keypoints2D(pts, conf), joints_cam))
    return MultiViewSample(clip, tuple(views), noise, int(seed), int(sample_id))


# ---------------------------------------------------------------------------
# JSON-lines dataset

def _fmt(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(k) + ":" + _fmt(v) for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return _fmt(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format(float(obj), ".17g")
    return json.dumps(obj)


def sample_to_dict(sample: MultiViewSample) -> dict:
    clip = sample.clip
    return {
        "schema_version": SCHEMA_VERSION,
        "sample_id": sample.sample_id,
        "clip": {"motion_id": clip.motion_id, "seed": clip.seed, "fps": FPS,
                 "frames": clip.frames, "canon": clip.canon},
        "noise": {"sigma_px": float(sample.noise.sigma_px), "p_occ": float(sample.noise.p_occ),
                  "seed": sample.noise_seed},
        "views": [{"view_id": v.view_id, "camera": v.camera.to_dict(),
                   "keypoints2d": v.keypoints.points, "confidence": v.keypoints.confidence,
                   "joints3d_cam": v.joints_cam} for v in sample.views],
    }


def sample_from_dict(d: dict) -> MultiViewSample:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    c = d["clip"]
    clip = MotionClip(np.asarray(c["frames"], dtype=np.float64),
                      np.asarray(c["canon"], dtype=np.float64), c["motion_id"], int(c["seed"]))
    views = tuple(
        RenderedView(int(v["view_id"]), CameraPose.from_dict(v["camera"]),
                     Keypoints2D(np.asarray(v["keypoints2d"]), np.asarray(v["confidence"])),
                     np.asarray(v["joints3d_cam"], dtype=np.float64))
        for v in d["views"])
    n = d.get("noise", {})
    return MultiViewSample(clip, views, NoiseSpec(n.get("sigma_px", 0.0), n.get("p_occ", 0.0)),
                           int(n.get("seed", 0)), int(d.get("sample_id", 0)))


def dumps_sample(sample: MultiViewSample) -> str:
    return _fmt(sample_to_dict(sample))


def write_dataset(path, samples: Iterable[MultiViewSample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sample in samples:
            fh.write(dumps_sample(sample))
            fh.write("\n")
            n += 1
    return n


def iter_dataset(path) -> Iterator[MultiViewSample]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield sample_from_dict(json.loads(line))


def read_dataset(path) -> list[MultiViewSample]:
    return list(iter_dataset(path))


def make_dataset(n_clips: int, cams: Sequence[CameraPose], T: int = 16,
                 noise: NoiseSpec | None = None, seed: int = 0,
                 kinds: Sequence[str] = MOTION_KINDS) -> list[MultiViewSample]:
    """Round-robin over motion kinds; clip ``i`` uses seed ``seed * 100003 + i``."""
    out = []
    for i in range(n_clips):
        kind = kinds[i % len(kinds)]
        clip = synth_motion(kind, T, seed * 100003 + i)
        out.append(render_views(clip, cams, noise, seed=seed * 100003 + i, sample_id=i))
    return out
