"""Training loop, checkpoints, held-out evaluation, ablations and the noise sweep."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import evaluation as ev
from .config import TrainConfig, load_config, save_config
from .errors import NaNLoss
from .geometry import NUM_JOINTS, Keypoints2D, MultiViewSample, body_frame_joints, mm_to_px
from .netcore import model as nm
from .netcore.layers import l2_normalize_forward
from .netcore.params import load_params, save_params
from .pipeline import AblationSpec, Batch, PoseModel, forward_backward, infer, root_relative

HISTORY_COLUMNS = ("step", "l_pose", "l_ortho", "l_align", "l_total", "lr")
METRIC_COLUMNS = ("sample_id", "view_id", "mpjpe", "pa_mpjpe", "accel")
ABLATION_COLUMNS = ("variant", "pa_mpjpe", "cross_view_variance", "view_cluster_accuracy")
SWEEP_COLUMNS = ("sigma_mm", "mpjpe", "pa_mpjpe")
DEFAULT_VARIANTS = (AblationSpec(), AblationSpec(disable_projection=True),
                    AblationSpec(disable_ortho_loss=True), AblationSpec(disable_align_loss=True))
SWEEP_JITTER = 0.02


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, shapes: dict[str, tuple[int, ...]], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    passed = sum(1 for m in cfg.milestones if epoch >= m * cfg.epochs)
    return cfg.lr * cfg.gamma ** passed


# ---------------------------------------------------------------------------
# data

def split_views(n_azimuth: int = 8, n_elevation: int = 2) -> tuple[list[int], list[int]]:
    """Seen views use even azimuth indices, unseen views the odd ones, at every elevation.

    View ids follow ``camera_grid`` order: ``elevation_index * n_azimuth + azimuth_index``.
    """
    seen, unseen = [], []
    for e in range(n_elevation):
        for a in range(n_azimuth):
            (seen if a % 2 == 0 else unseen).append(e * n_azimuth + a)
    return seen, unseen


@dataclass
class ViewTable:
    """Encoded inputs and targets for every (sample, view) pair, stacked."""
    X: np.ndarray
    gt: np.ndarray          # camera frame, root relative
    body: np.ndarray        # body frame, root relative
    canon: np.ndarray
    sample_ids: np.ndarray
    view_ids: np.ndarray
    keypoints: list[Keypoints2D] = field(repr=False, default_factory=list)
    image_sizes: list[tuple[int, int]] = field(repr=False, default_factory=list)
    cameras: list = field(repr=False, default_factory=list)

    def __len__(self) -> int:
        return len(self.sample_ids)


def view_table(dataset: Sequence[MultiViewSample], view_ids: Sequence[int] | None = None,
               clip_len: int | None = None) -> ViewTable:
    if not dataset:
        raise ValueError("dataset is empty")
    wanted = None if view_ids is None else set(int(v) for v in view_ids)
    X, gt, body, canon, sids, vids, kps, sizes, cams = [], [], [], [], [], [], [], [], []
    T = clip_len or dataset[0].clip.T
    for s in dataset:
        if s.clip.T < T:
            raise ValueError(f"sample {s.sample_id} has {s.clip.T} frames, need {T}")
        for v in s.views:
            if wanted is not None and v.view_id not in wanted:
                continue
            X.append(nm.encode_keypoints(v.keypoints, v.camera.image_size))
            gt.append(root_relative(v.joints_cam).reshape(s.clip.T, -1))
            body.append(body_frame_joints(s.clip).reshape(s.clip.T, -1))
            canon.append(s.clip.canon)
            sids.append(s.sample_id)
            vids.append(v.view_id)
            kps.append(v.keypoints)
            sizes.append(tuple(v.camera.image_size))
            cams.append(v.camera)
    if not X:
        raise ValueError("no (sample, view) pairs match the requested views")
    lengths = {x.shape[0] for x in X}
    if len(lengths) != 1:
        raise ValueError("all clips must share one length")
    return ViewTable(np.stack(X), np.stack(gt), np.stack(body), np.stack(canon), np.array(sids),
                     np.array(vids), kps, sizes, cams)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    model: PoseModel
    history: list[dict[str, float]]
    config: TrainConfig
    ablation: AblationSpec


def train(dataset: Sequence[MultiViewSample], config: TrainConfig,
          ablation: AblationSpec | None = None, view_ids: Sequence[int] | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam over shuffled (sample, view) pairs with global-norm clipping.

    Deterministic for a fixed ``config.seed``: initialization, shuffling,
    cropping and dropout each draw from their own seeded stream.
    """
    ablation = ablation or AblationSpec()
    table = view_table(dataset, view_ids)
    model = PoseModel.create(config.model, config.seed)
    opt = Adam(model.params.shapes())
    order_rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    n, T_full = len(table), table.X.shape[1]
    T = min(config.clip_len, T_full)
    history: list[dict[str, float]] = []
    step = 0
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        perm = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            t0 = int(order_rng.integers(0, T_full - T + 1))
            sl = slice(t0, t0 + T)
            batch = Batch(table.X[idx, sl], table.gt[idx, sl], table.canon[idx, sl], table.body[idx, sl])
            report, _ = forward_backward(model, batch, alpha=config.alpha, beta=config.beta,
                                         tau=config.tau, ablation=ablation, rng=drop_rng)
            row = {"step": step, **report.row(), "lr": lr}
            if not all(math.isfinite(row[k]) for k in ("l_pose", "l_ortho", "l_align", "l_total")):
                raise NaNLoss(step, f"non-finite loss at step {step}: {row}")
            clip_global_norm(report.grads, config.grad_clip)
            opt.step(model.params, report.grads, lr)
            if not all(np.isfinite(v).all() for _, v in model.params.items()):
                raise NaNLoss(step, "parameters became non-finite after the update")
            history.append(row)
            if on_step is not None:
                on_step(row)
            step += 1
    return TrainResult(model, history, config, ablation)


def write_history(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(float(r[c])) for c in HISTORY_COLUMNS[1:]])


def save_checkpoint(model: PoseModel, config: TrainConfig, directory,
                    ablation: AblationSpec | None = None) -> Path:
    directory = Path(directory)
    save_params(model.params, directory)
    save_config(config, directory / "config.cfg")
    (directory / "ablation.txt").write_text((ablation or AblationSpec()).name + "\n")
    return directory


def load_checkpoint(directory, config: TrainConfig | None = None
                    ) -> tuple[PoseModel, TrainConfig, AblationSpec]:
    """Load parameters, checking their shapes against ``config`` (or the stored one)."""
    directory = Path(directory)
    if config is None:
        config = load_config(directory / "config.cfg")
    params = load_params(directory, nm.param_shapes(config.model))
    abl_file = directory / "ablation.txt"
    ablation = AblationSpec.parse(abl_file.read_text().strip()) if abl_file.exists() else AblationSpec()
    return PoseModel(config.model, params), config, ablation


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    rows: list[dict]                 # one per (sample, view)
    per_view: dict[int, dict]
    aggregate: dict[str, float]


def _predict(model, table: ViewTable, use_projection: bool, X=None, k3d_noise=None):
    X = table.X if X is None else X
    return infer(model, X, use_projection=use_projection, k3d_noise=k3d_noise)


def clip_view_embeddings(view: np.ndarray) -> np.ndarray:
    """One embedding per (sample, view): the clip mean of the per-frame rows."""
    return view.mean(axis=1)


def motion_variance(table: ViewTable, m_ortho: np.ndarray) -> float:
    """Mean over samples of ``cross_view_variance`` on unit-normalized motion rows."""
    z, _ = l2_normalize_forward(m_ortho.reshape(-1, m_ortho.shape[-1]))
    z = z.reshape(m_ortho.shape)
    vals = []
    for sid in np.unique(table.sample_ids):
        rows = np.flatnonzero(table.sample_ids == sid)
        if len(rows) >= 2:
            vals.append(ev.cross_view_variance(z[rows]))
    return float(np.mean(vals))


def evaluate(model: PoseModel, dataset: Sequence[MultiViewSample], view_ids: Sequence[int],
             use_projection: bool = True, cluster_seed: int = 0,
             table: ViewTable | None = None) -> EvalReport:
    table = table or view_table(dataset, view_ids)
    out = _predict(model, table, use_projection)
    B, T, _ = table.X.shape
    pred = out.refined.reshape(B, T, NUM_JOINTS, 3)
    gt = table.body.reshape(B, T, NUM_JOINTS, 3)
    rows = []
    for i in range(B):
        rows.append({"sample_id": int(table.sample_ids[i]), "view_id": int(table.view_ids[i]),
                     **ev.metric_rows(pred[i], gt[i])})
    per_view = {}
    for vid in sorted(set(int(v) for v in table.view_ids)):
        sel = [r for r in rows if r["view_id"] == vid]
        per_view[vid] = {k: float(np.mean([r[k] for r in sel])) for k in ("mpjpe", "pa_mpjpe", "accel")}
        per_view[vid]["count"] = len(sel)
    agg = {k: float(np.mean([r[k] for r in rows])) for k in ("mpjpe", "pa_mpjpe", "accel")}
    n_views = len(per_view)
    if n_views >= 2:
        agg["view_cluster_accuracy"] = ev.view_cluster_accuracy(
            clip_view_embeddings(out.view), table.view_ids, n_views, seed=cluster_seed)
        agg["cross_view_variance"] = motion_variance(table, out.m_ortho)
    return EvalReport(rows, per_view, agg)


def write_metrics(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in report.rows:
            w.writerow([r["sample_id"], r["view_id"]] + [repr(float(r[k])) for k in METRIC_COLUMNS[2:]])


def run_ablation_suite(dataset: Sequence[MultiViewSample], config: TrainConfig,
                       train_views: Sequence[int], eval_views: Sequence[int],
                       variants: Sequence[AblationSpec] = DEFAULT_VARIANTS,
                       eval_dataset: Sequence[MultiViewSample] | None = None,
                       on_variant: Callable[[str, TrainResult], None] | None = None) -> list[dict]:
    """Train each variant from the same seed and score it on the unseen views."""
    eval_dataset = eval_dataset if eval_dataset is not None else dataset
    table = view_table(eval_dataset, eval_views)
    out = []
    for spec in variants:
        res = train(dataset, config, spec, view_ids=train_views)
        if on_variant is not None:
            on_variant(spec.name, res)
        rep = evaluate(res.model, eval_dataset, eval_views,
                       use_projection=not spec.disable_projection, table=table)
        out.append({"variant": spec.name, "pa_mpjpe": rep.aggregate["pa_mpjpe"],
                    "cross_view_variance": rep.aggregate["cross_view_variance"],
                    "view_cluster_accuracy": rep.aggregate["view_cluster_accuracy"]})
    return out


# ---------------------------------------------------------------------------
# noise robustness

@dataclass
class SweepResult:
    rows: list[dict]
    monotone: bool

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows])


def trend_non_decreasing(values: Sequence[float], jitter: float = SWEEP_JITTER) -> bool:
    return all(b >= a * (1.0 - jitter) for a, b in zip(values[:-1], values[1:]))


def noise_sweep(model: PoseModel, dataset: Sequence[MultiViewSample], sigmas_mm: Sequence[float],
                view_ids: Sequence[int] | None = None, seed: int = 0,
                use_projection: bool = True) -> SweepResult:
    """Zero-mean Gaussian noise of ``sigma`` mm on the 2D input and the coarse 3D keypoints.

    The 2D part is converted to pixels at each camera's subject distance. One
    standard-normal draw is reused at every level so rows differ only by scale.
    """
    sigmas = [float(s) for s in sigmas_mm]
    if not sigmas or sigmas[0] != 0.0 or any(b < a for a, b in zip(sigmas[:-1], sigmas[1:])):
        raise ValueError("sigmas must be sorted ascending and start at 0")
    table = view_table(dataset, view_ids)
    rng = np.random.default_rng([seed, 3])
    z2d = [rng.standard_normal(kp.points.shape) for kp in table.keypoints]
    z3d = rng.standard_normal(table.gt.shape)
    B, T, _ = table.X.shape
    gt = table.body.reshape(B, T, NUM_JOINTS, 3)
    rows = []
    for sigma in sigmas:
        if sigma == 0.0:
            X, noise3 = table.X, None
        else:
            X = np.stack([
                nm.encode_keypoints(Keypoints2D(kp.points + mm_to_px(sigma, cam) * z, kp.confidence), size)
                for kp, cam, size, z in zip(table.keypoints, table.cameras, table.image_sizes, z2d)])
            noise3 = (sigma / ev.M_TO_MM) * z3d
        out = _predict(model, table, use_projection, X=X, k3d_noise=noise3)
        pred = out.refined.reshape(B, T, NUM_JOINTS, 3)
        rows.append({"sigma_mm": sigma, "mpjpe": ev.mpjpe(pred, gt), "pa_mpjpe": ev.pa_mpjpe(pred, gt)})
    ok = trend_non_decreasing([r["mpjpe"] for r in rows]) and \
        trend_non_decreasing([r["pa_mpjpe"] for r in rows])
    return SweepResult(rows, ok)


def write_rows(rows: Sequence[dict], columns: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in columns])


# ---------------------------------------------------------------------------
# desk-scale benchmark

DESK_NOISE_PX = 2.0
DESK_OCCLUSION = 0.02
DESK_TRAIN_CLIPS = 120       # 6 kinds x 20 seeds, each rendered from 16 views
DESK_EVAL_CLIPS = 30


def desk_datasets(train_seed: int = 1, eval_seed: int = 7, clip_len: int = 16):
    """Training clips and disjoint held-out clips on the 8-azimuth x 2-elevation grid."""
    from .geometry import NoiseSpec, camera_grid, make_dataset
    cams = camera_grid()
    noise = NoiseSpec(DESK_NOISE_PX, DESK_OCCLUSION)
    train_set = make_dataset(DESK_TRAIN_CLIPS, cams, clip_len, noise, seed=train_seed)
    eval_set = make_dataset(DESK_EVAL_CLIPS, cams, clip_len, noise, seed=eval_seed)
    return train_set, eval_set


@dataclass
class DeskBenchmark:
    table: list[dict]                 # ablation rows on unseen views
    seen_cluster_accuracy: float      # full model, held-out clips, training views
    unseen_cluster_accuracy: float    # full model, held-out clips, unseen views
    models: dict[str, PoseModel]
    seconds: float
    eval_set: list[MultiViewSample] = field(repr=False, default_factory=list)


def desk_benchmark(config: TrainConfig | None = None, train_seed: int = 1, eval_seed: int = 7,
                   variants: Sequence[AblationSpec] = DEFAULT_VARIANTS + (
                       AblationSpec(disable_ortho_loss=True, disable_align_loss=True),)
                   ) -> DeskBenchmark:
    """Train every variant on the seen views and score it on held-out clips.

    The ablation table uses the unseen views; view clustering is reported for
    the full model on both view sets.
    """
    config = config or TrainConfig.desk()
    t0 = time.perf_counter()
    train_set, eval_set = desk_datasets(train_seed, eval_seed, config.clip_len)
    seen, unseen = split_views()
    models: dict[str, PoseModel] = {}
    table = run_ablation_suite(train_set, config, seen, unseen, variants, eval_dataset=eval_set,
                               on_variant=lambda name, res: models.__setitem__(name, res.model))
    full = models["full"]
    seen_rep = evaluate(full, eval_set, seen)
    return DeskBenchmark(table, seen_rep.aggregate["view_cluster_accuracy"],
                         row_of(table, "full")["view_cluster_accuracy"], models,
                         time.perf_counter() - t0, eval_set)


def row_of(table: Sequence[dict], variant: str) -> dict:
    return next(r for r in table if r["variant"] == variant)
