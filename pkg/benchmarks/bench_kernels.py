"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--stream]

Both backends are imported side by side, so one process times both. Outputs
are also checked for agreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from movid.kernels import _pykernels

try:
    from movid.kernels import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    B, K, D, H, X = 64, 4, 32, 64, 51
    raw = rng.standard_normal((B, K, D))
    Q, _ = _pykernels.mgs_orthonormalize(raw)
    M = rng.standard_normal((B, D))
    x, h = rng.standard_normal((1, X)), rng.standard_normal((1, H))
    Wx = rng.standard_normal((X, 3 * H)) * 0.1
    Wh = rng.standard_normal((H, 3 * H)) * 0.1
    b = rng.standard_normal(3 * H) * 0.1
    return {
        "mgs_orthonormalize (64x4x32)": ("mgs_orthonormalize", (raw,)),
        "deflate (64x32, K=4)": ("deflate", (M, Q)),
        "gru_step (1x51 -> 64)": ("gru_step", (x, h, Wx, Wh, b)),
    }


def _time(fn, args, repeat):
    fn(*args)
    samples = np.empty(repeat)
    for i in range(repeat):
        t0 = time.perf_counter_ns()
        fn(*args)
        samples[i] = time.perf_counter_ns() - t0
    return float(np.median(samples)) / 1e3


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s} {'max diff':>10s}")
    for label, (name, args) in _cases(rng).items():
        py = _time(getattr(_pykernels, name), args, repeat)
        if _ckernels is None:
            print(f"{label:32s} {py:10.1f} {'n/a':>10s}")
            continue
        cy = _time(getattr(_ckernels, name), args, repeat)
        diff = np.abs(_first(getattr(_pykernels, name)(*args)) - _first(getattr(_ckernels, name)(*args))).max()
        print(f"{label:32s} {py:10.1f} {cy:10.1f} {py / cy:8.2f} {diff:10.2e}")


def bench_stream(frames: int) -> None:
    """Per-frame streaming latency with the active backend."""
    from movid import kernels
    from movid.geometry import camera_grid, make_dataset
    from movid.netcore.model import EncoderConfig
    from movid.pipeline import PoseModel
    from movid.streaming import StreamingEngine

    model = PoseModel.create(EncoderConfig(), seed=0)
    view = make_dataset(1, camera_grid()[:1], T=frames, seed=0)[0].views[0]
    _, res = StreamingEngine(model).run_stream(view.keypoints, view.camera.image_size)
    lat = np.array([r.total_ns for r in res[1:]]) / 1e3
    print(f"stream ({kernels.BACKEND}): {frames} frames, median {np.median(lat):.1f} us/frame, "
          f"p95 {np.percentile(lat, 95):.1f} us/frame")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--stream", action="store_true", help="also time per-frame streaming")
    ap.add_argument("--frames", type=int, default=256)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.stream:
        bench_stream(args.frames)


if __name__ == "__main__":
    main()
