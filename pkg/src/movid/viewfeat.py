"""Geometric view features from hip and shoulder joints.

Each frame yields a 10-vector ``[v_hip, v_shoulder, z_hip_L, z_hip_R,
z_shoulder_L, z_shoulder_R]`` where the width vectors are left-minus-right
differences. There are no learned parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .geometry import HIP_L, HIP_R, NUM_JOINTS, SHOULDER_L, SHOULDER_R, Skeleton3D

VIEW_FEAT_DIM = 10


@dataclass(frozen=True)
class ViewGeomFeature:
    v_hip: np.ndarray
    v_shoulder: np.ndarray
    z_hip_L: float
    z_hip_R: float
    z_shoulder_L: float
    z_shoulder_R: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v_hip, self.v_shoulder,
                               [self.z_hip_L, self.z_hip_R, self.z_shoulder_L, self.z_shoulder_R]])

    @classmethod
    def from_vector(cls, f: np.ndarray) -> "ViewGeomFeature":
        f = np.asarray(f, dtype=np.float64)
        return cls(f[0:3].copy(), f[3:6].copy(), float(f[6]), float(f[7]), float(f[8]), float(f[9]))


def view_features(joints: np.ndarray) -> np.ndarray:
    """Vectorised extraction: (..., J, 3) -> (..., 10)."""
    k = np.asarray(joints, dtype=np.float64)
    if k.shape[-2:] != (NUM_JOINTS, 3):
        raise ShapeMismatch(f"expected (..., {NUM_JOINTS}, 3), got {k.shape}")
    out = np.empty(k.shape[:-2] + (VIEW_FEAT_DIM,))
    out[..., 0:3] = k[..., HIP_L, :] - k[..., HIP_R, :]
    out[..., 3:6] = k[..., SHOULDER_L, :] - k[..., SHOULDER_R, :]
    out[..., 6] = k[..., HIP_L, 2]
    out[..., 7] = k[..., HIP_R, 2]
    out[..., 8] = k[..., SHOULDER_L, 2]
    out[..., 9] = k[..., SHOULDER_R, 2]
    return out


def view_features_backward(grad_feat: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`view_features`: (..., 10) -> (..., J, 3)."""
    g = np.zeros(grad_feat.shape[:-1] + (NUM_JOINTS, 3))
    g[..., HIP_L, :] += grad_feat[..., 0:3]
    g[..., HIP_R, :] -= grad_feat[..., 0:3]
    g[..., SHOULDER_L, :] += grad_feat[..., 3:6]
    g[..., SHOULDER_R, :] -= grad_feat[..., 3:6]
    g[..., HIP_L, 2] += grad_feat[..., 6]
    g[..., HIP_R, 2] += grad_feat[..., 7]
    g[..., SHOULDER_L, 2] += grad_feat[..., 8]
    g[..., SHOULDER_R, 2] += grad_feat[..., 9]
    return g


def extract_view_feature(s: Skeleton3D) -> ViewGeomFeature:
    if s.frame_tag != "camera":
        raise ValueError("view features are only defined in the camera frame")
    if s.joints.ndim != 2:
        raise ShapeMismatch("extract_view_feature takes a single frame")
    return ViewGeomFeature.from_vector(view_features(s.joints))


def extract_sequence(k3d) -> np.ndarray:
    """F_view matrix (T, 10) for a (T, J, 3) array or a list of skeletons."""
    if isinstance(k3d, Skeleton3D):
        joints = k3d.joints
    elif isinstance(k3d, (list, tuple)):
        joints = np.stack([s.joints if isinstance(s, Skeleton3D) else np.asarray(s) for s in k3d])
    else:
        joints = np.asarray(k3d, dtype=np.float64)
    if joints.ndim != 3 or joints.shape[0] < 1:
        raise ShapeMismatch(f"expected a non-empty (T, J, 3) sequence, got {joints.shape}")
    return view_features(joints)
