"""Pose metrics and view-embedding diagnostics.

Pose inputs are in meters with joints on axis -2 and coordinates on axis -1;
MPJPE / PA-MPJPE are returned in millimeters and ACCEL in mm/frame^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateConfiguration, ShapeMismatch, TooShort

M_TO_MM = 1000.0
_RANK_TOL = 1e-10


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    scale: float
    translation: np.ndarray
    residual_mm: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def mpjpe(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * M_TO_MM)


def _similarity_fit(pred, gt):
    """Batched least-squares similarity transform taking pred onto gt.

    pred, gt: (N, J, 3). Returns R (N, 3, 3), s (N,), t (N, 3).
    """
    mu_p = pred.mean(axis=1, keepdims=True)
    mu_g = gt.mean(axis=1, keepdims=True)
    P = pred - mu_p
    G = gt - mu_g
    H = np.einsum("nji,njk->nik", P, G)          # cross-covariance, pred x gt
    U, S, Vt = np.linalg.svd(H)
    if np.any(S[:, 1] <= _RANK_TOL * np.maximum(S[:, 0], 1e-300)):
        raise DegenerateConfiguration("collinear joints: the rotation is not unique")
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    d[d == 0] = 1.0
    # flip the weakest singular direction when the raw solution is a reflection
    V[:, :, 2] *= d[:, None]
    S = S.copy()
    S[:, 2] *= d
    R = V @ np.swapaxes(U, 1, 2)
    s = S.sum(axis=1) / (P * P).sum(axis=(1, 2))
    t = mu_g[:, 0] - s[:, None] * np.einsum("nij,nj->ni", R, mu_p[:, 0])
    return R, s, t


def procrustes_align(pred_frame, gt_frame) -> AlignmentResult:
    pred, gt = _check_pair(pred_frame, gt_frame)
    if pred.ndim != 2 or pred.shape[0] < 3:
        raise DegenerateConfiguration("need a single frame with at least 3 joints")
    R, s, t = _similarity_fit(pred[None], gt[None])
    aligned = s[0] * pred @ R[0].T + t[0]
    residual = np.linalg.norm(aligned - gt, axis=-1) * M_TO_MM
    return AlignmentResult(R[0], float(s[0]), t[0], residual)


def pa_aligned(pred, gt) -> np.ndarray:
    """Per-frame Procrustes-aligned copy of ``pred``."""
    pred, gt = _check_pair(pred, gt)
    shape = pred.shape
    P = pred.reshape((-1,) + shape[-2:])
    G = gt.reshape((-1,) + shape[-2:])
    R, s, t = _similarity_fit(P, G)
    aligned = s[:, None, None] * np.einsum("nij,nkj->nki", R, P) + t[:, None, :]
    return aligned.reshape(shape)


def pa_mpjpe(pred, gt) -> float:
    return mpjpe(pa_aligned(pred, gt), gt)


def pa_mpjpe_per_frame(pred, gt) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pa_aligned(pred, gt) - gt, axis=-1).mean(axis=-1) * M_TO_MM


def accel_error(pred, gt) -> float:
    """Mean norm of the second-difference mismatch over interior frames (axis 0 is time)."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 3:
        raise TooShort("ACCEL needs at least 3 frames")
    acc_p = pred[2:] - 2.0 * pred[1:-1] + pred[:-2]
    acc_g = gt[2:] - 2.0 * gt[1:-1] + gt[:-2]
    return float(np.linalg.norm(acc_p - acc_g, axis=-1).mean() * M_TO_MM)


# ---------------------------------------------------------------------------
# view diagnostics

def best_assignment(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cluster-to-label matching maximizing matched counts (rectangular allowed)."""
    rows, cols = linear_sum_assignment(np.asarray(confusion), maximize=True)
    return rows, cols


def confusion_matrix(clusters: np.ndarray, labels: np.ndarray, n_clusters: int,
                     n_labels: int) -> np.ndarray:
    C = np.zeros((n_clusters, n_labels), dtype=np.int64)
    np.add.at(C, (clusters, labels), 1)
    return C


def view_cluster_accuracy(embeddings, labels, n_views: int, seed: int = 0,
                          restarts: int = 50) -> float:
    """k-means with ``k = n_views`` then the best one-to-one cluster/label match."""
    from sklearn.cluster import KMeans

    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if n_views < 2:
        raise ValueError("need at least two views")
    uniq, y_idx = np.unique(y, return_inverse=True)
    if len(uniq) > n_views:
        raise ValueError(f"{len(uniq)} distinct labels but n_views={n_views}")
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < n_views:
        # degenerate input: lump identical rows in order of first appearance
        _, clusters = np.unique(X, axis=0, return_inverse=True)
        clusters = clusters.ravel()
    else:
        km = KMeans(n_clusters=n_views, n_init=restarts, random_state=seed)
        clusters = km.fit_predict(X)
    C = confusion_matrix(clusters, y_idx, n_views, n_views)
    rows, cols = best_assignment(C)
    return float(C[rows, cols].sum() / len(y))


def cross_view_variance(features) -> float:
    """Mean over frames of the trace of the across-view population covariance.

    ``features`` is (n_views, T, D) for one clip.
    """
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 3 or F.shape[0] < 2:
        raise ValueError("need (n_views >= 2, T, D) features")
    centered = F - F.mean(axis=0, keepdims=True)
    return float((centered * centered).sum(axis=2).mean(axis=0).mean())


def metric_rows(pred, gt) -> dict[str, float]:
    return {"mpjpe": mpjpe(pred, gt), "pa_mpjpe": pa_mpjpe(pred, gt),
            "accel": accel_error(pred, gt) if np.asarray(pred).shape[0] >= 3 else float("nan")}
