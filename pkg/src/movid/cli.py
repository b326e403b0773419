"""``movid`` command line: gen-data, train, eval, stream-bench, grad-check.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure, 3 I/O.
Every command writes one ``*.manifest.json`` next to its outputs.
"""
from __future__ import annotations

import os

# BLAS thread pools are sized when numpy loads, so the cap must precede it.
if os.environ.get("MOVID_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["MOVID_THREADS"])

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
FRAME_COLUMNS = ("sample_id", "view_id", "frame", "difficulty", "flip_activated", "encode_ns",
                 "viewfeat_ns", "project_ns", "decode_ns", "flip_extra_ns", "pa_mpjpe")
VIEW_COLUMNS = ("view_id", "count", "mpjpe", "pa_mpjpe", "accel")
SUMMARY_COLUMNS = ("metric", "value")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# manifests

def git_blob_hash(path) -> str:
    """SHA-1 of ``blob <size>\\0<content>``, as ``git hash-object`` computes it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def inputs_hash(paths) -> str:
    h = hashlib.sha1()
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for child in sorted(q for q in p.rglob("*") if q.is_file() and not q.name.endswith(".manifest.json")):
                h.update(f"{child.relative_to(p)} {git_blob_hash(child)}\n".encode())
        else:
            h.update(f"{p.name} {git_blob_hash(p)}\n".encode())
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int | None
    config_hash: str | None
    input_hash: str | None
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        self.finished = _now()
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _manifest_path(out: Path) -> Path:
    return out / "run.manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    from .geometry import NoiseSpec, camera_grid, make_dataset, write_dataset
    grid = camera_grid()
    if not 1 <= args.views <= len(grid):
        raise UsageError(f"--views must be in 1..{len(grid)}")
    if args.clips < 1 or args.frames < 2:
        raise UsageError("--clips must be >= 1 and --frames >= 2")
    if not 0.0 <= args.occ_prob <= 1.0 or args.noise_px < 0:
        raise UsageError("--occ-prob must be in [0, 1] and --noise-px >= 0")
    man = RunManifest("gen-data", args.argv, args.seed, None, None, _now())
    samples = make_dataset(args.clips, grid[:args.views], args.frames,
                           NoiseSpec(args.noise_px, args.occ_prob), seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, samples)
    counts: dict[int, int] = {}
    for s in samples:
        for v in s.views:
            counts[v.view_id] = counts.get(v.view_id, 0) + 1
    for vid in sorted(counts):
        print(f"view {vid:2d}: {counts[vid]} clips")
    man.outputs = [str(out)]
    man.extra = {"views": sorted(counts), "frames": args.frames}
    man.write(_manifest_path(out))
    return EXIT_OK


def _load_config(args):
    from .config import TrainConfig, load_config
    base = TrainConfig.desk() if args.profile == "desk" else TrainConfig()
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _view_ids(spec: str, available: list[int]) -> list[int]:
    from .trainer import split_views
    if spec == "all":
        return available
    seen, unseen = split_views()
    chosen = seen if spec == "seen" else unseen
    return [v for v in available if v in chosen]


def cmd_train(args) -> int:
    from .geometry import read_dataset
    from .pipeline import AblationSpec
    from .trainer import save_checkpoint, train, write_history
    cfg = _load_config(args)
    try:
        ablation = AblationSpec.parse(args.ablation)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = read_dataset(args.data)
    available = sorted({v.view_id for s in data for v in s.views})
    views = _view_ids(args.views, available)
    if not views:
        raise UsageError(f"no views of split {args.views!r} in the dataset")
    man = RunManifest("train", args.argv, cfg.seed, cfg.digest(), inputs_hash([args.data]), _now())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = train(data, cfg, ablation, view_ids=views)
    save_checkpoint(res.model, cfg, out, ablation)
    write_history(res.history, out / "history.csv")
    last = res.history[-1] if res.history else {}
    print(f"trained {ablation.name} for {len(res.history)} steps in {time.perf_counter() - t0:.1f}s; "
          f"final l_total={last.get('l_total', float('nan')):.5f}")
    man.outputs = [str(out / n) for n in ("params.bin", "params.manifest", "config.cfg", "history.csv")]
    man.extra = {"train_views": views, "ablation": ablation.name}
    man.write(_manifest_path(out))
    return EXIT_OK


def _train_views(checkpoint: Path) -> list[int] | None:
    path = _manifest_path(checkpoint)
    if path.exists():
        return read_manifest(path).get("extra", {}).get("train_views")
    return None


def cmd_eval(args) -> int:
    from .geometry import read_dataset
    from .trainer import evaluate, load_checkpoint, write_metrics
    ckpt = Path(args.checkpoint)
    config = None
    if args.config:
        from .config import load_config
        config = load_config(args.config)
    model, cfg, ablation = load_checkpoint(ckpt, config)
    data = read_dataset(args.data)
    available = sorted({v.view_id for s in data for v in s.views})
    trained_on = _train_views(ckpt)
    if args.split == "held-out-views":
        if trained_on is None:
            raise UsageError("checkpoint has no training manifest; cannot derive held-out views")
        views = [v for v in available if v not in set(trained_on)]
    elif args.split == "seen-views":
        views = [v for v in available if trained_on is None or v in set(trained_on)]
    else:
        views = available
    if not views:
        raise UsageError(f"split {args.split!r} leaves no views to evaluate")
    if args.split == "held-out-views":
        assert not set(views) & set(trained_on), "held-out views overlap the training views"
    man = RunManifest("eval", args.argv, cfg.seed, cfg.digest(),
                      inputs_hash([args.data, ckpt]), _now())
    report = evaluate(model, data, views, use_projection=not ablation.disable_projection)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(report, out / "metrics.csv")
    with open(out / "per_view.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VIEW_COLUMNS)
        for vid, r in report.per_view.items():
            w.writerow([vid, r["count"], repr(r["mpjpe"]), repr(r["pa_mpjpe"]), repr(r["accel"])])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for k, v in report.aggregate.items():
            w.writerow([k, repr(v)])
    for k, v in report.aggregate.items():
        print(f"{k:24s} {v:.4f}")
    man.outputs = [str(out / n) for n in ("metrics.csv", "per_view.csv", "aggregate.csv")]
    man.extra = {"split": args.split, "views": views, "train_views": trained_on}
    man.write(_manifest_path(out))
    return EXIT_OK


def cmd_stream_bench(args) -> int:
    from .evaluation import pa_mpjpe_per_frame
    from .geometry import body_frame_joints, read_dataset
    from .streaming import STAGES, RefinementPolicy, StreamingEngine, calibrate_prototypes, run_batch
    from .trainer import load_checkpoint
    if not 0.0 <= args.theta_flip <= 1.0:
        raise UsageError("--theta-flip must be in [0, 1]")
    ckpt = Path(args.checkpoint)
    model, cfg, ablation = load_checkpoint(ckpt)
    data = read_dataset(args.data)
    if args.max_clips:
        data = data[:args.max_clips]
    use_proj = not ablation.disable_projection
    if args.policy_calibration > 0:
        policy = calibrate_prototypes(model, data, args.policy_calibration, args.theta_flip)
    else:
        # no calibration: a single prototype at the origin, so only theta decides
        policy = RefinementPolicy(np.zeros((1, cfg.model.d_view)), args.theta_flip)
    engine = StreamingEngine(model, policy, use_projection=use_proj)
    plain_engine = StreamingEngine(model, None, use_projection=use_proj)
    man = RunManifest("stream-bench", args.argv, cfg.seed, cfg.digest(),
                      inputs_hash([args.data, ckpt]), _now())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    totals = dict.fromkeys(STAGES, 0)
    n_frames = n_active = 0
    max_dev = 0.0
    with open(out / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRAME_COLUMNS)
        for s in data:
            gt = body_frame_joints(s.clip)
            for v in s.views:
                _, results = engine.run_stream(v.keypoints, v.camera.image_size)
                refined = np.stack([r.refined.joints for r in results])
                errs = pa_mpjpe_per_frame(refined, gt)
                for t, r in enumerate(results):
                    w.writerow([s.sample_id, v.view_id, t, repr(r.difficulty), int(r.flip_activated)]
                               + [r.latency_ns[k] for k in STAGES] + [repr(float(errs[t]))])
                    for k in STAGES:
                        totals[k] += r.latency_ns[k]
                    n_active += r.flip_activated
                n_frames += len(results)
                _, plain = plain_engine.run_stream(v.keypoints, v.camera.image_size)
                oracle = run_batch(model, v.keypoints, v.camera.image_size, use_proj)["refined"]
                stream = np.stack([r.refined.joints for r in plain])
                max_dev = max(max_dev, float(np.abs(stream - oracle).max()))
    summary = {"frames": n_frames, "activation_rate": n_active / max(n_frames, 1),
               "stream_batch_max_dev": max_dev,
               "mean_frame_ns": sum(totals.values()) / max(n_frames, 1)}
    for k in STAGES:
        summary[f"mean_{k}_ns"] = totals[k] / max(n_frames, 1)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for k, v in summary.items():
            w.writerow([k, repr(v)])
    for k, v in summary.items():
        print(f"{k:24s} {v}")
    man.outputs = [str(out / "frames.csv"), str(out / "summary.csv")]
    man.extra = {"theta_flip": args.theta_flip, "hard_views": list(policy.hard_views)}
    man.write(_manifest_path(out))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .netcore.gradcheck import COMPONENTS, grad_check
    comps = COMPONENTS if args.component == "all" else (args.component,)
    if args.component != "all" and args.component not in COMPONENTS:
        raise UsageError(f"unknown component {args.component!r}; choose from all, {', '.join(COMPONENTS)}")
    failed = False
    for c in comps:
        tol = min(args.tol, args.linear_tol) if c == "linear" else args.tol
        rep = grad_check(c, seed=args.seed, tol=tol)
        print(rep.line())
        failed |= not rep.passed
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        RunManifest("grad-check", args.argv, args.seed, None, None, _now(),
                    extra={"components": list(comps), "passed": not failed}).write(out)
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="movid", description="Motion/view disentangled pose lifting on synthetic data.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic multi-view dataset (JSON lines)")
    g.add_argument("--out", required=True)
    g.add_argument("--clips", type=int, default=120)
    g.add_argument("--views", type=int, default=16, help="first N cameras of the 8x2 grid")
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--noise-px", type=float, default=2.0)
    g.add_argument("--occ-prob", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--profile", choices=("desk", "full"), default="desk")
    t.add_argument("--ablation", default="full",
                   help="full, or '+'-joined subset of no-projection, no-ortho, no-align")
    t.add_argument("--views", choices=("seen", "unseen", "all"), default="seen")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="pose and view metrics for a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="expected config; shapes must match the checkpoint")
    e.add_argument("--split", choices=("held-out-views", "seen-views", "all"), default="held-out-views")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream-bench", help="replay streams frame by frame")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--theta-flip", type=float, default=0.5)
    s.add_argument("--policy-calibration", type=int, default=4, metavar="N_HARD",
                   help="number of hard views to calibrate prototypes from (0 disables)")
    s.add_argument("--max-clips", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stream_bench)

    c = sub.add_parser("grad-check", help="finite-difference gradient verification")
    c.add_argument("--component", default="all")
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--linear-tol", type=float, default=1e-9)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="manifest path")
    c.set_defaults(func=cmd_grad_check)
    return ap


def main(argv=None) -> int:
    from .errors import CheckpointShapeMismatch, ConfigParseError, NaNLoss
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"movid {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigParseError as exc:
        print(f"movid {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NaNLoss, FloatingPointError) as exc:
        print(f"movid {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointShapeMismatch as exc:
        print(f"movid {args.command}: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"movid {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
