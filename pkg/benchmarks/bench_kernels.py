"""Compare the compiled and pure-Python kernel backends.

Run ``python3 benchmarks/bench_kernels.py``; prints median wall time per call
and the speedup for conv forward/backward and the rotated-IoU matrix.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from graspkit.geom import GraspRect, rect_to_quad
from graspkit.kernels import compiled_backend, python_backend


def _median_time(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _conv_case(rng, batch, cin, cout, size, k, stride, padding):
    x = rng.standard_normal((batch, cin, size, size))
    w = rng.standard_normal((cout, cin, k, k))
    ho = (size + 2 * padding - k) // stride + 1
    g = rng.standard_normal((batch, cout, ho, ho))
    return x, w, g


def _quads(rng, n):
    rects = [GraspRect(*rng.uniform(0, 64, 2), *rng.uniform(4, 20, 2), rng.uniform(0, 180)) for _ in range(n)]
    return np.stack([rect_to_quad(r) for r in rects])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    cases = []
    for name, shape in [("conv 3x3 head  (8x64x8x8 -> 64)", (8, 64, 64, 8, 3, 1, 1)),
                        ("conv 4x4 patch (8x3x64x64 -> 16)", (8, 3, 16, 64, 4, 4, 0)),
                        ("conv 2x2/2 fuse (8x64x8x8 -> 64)", (8, 64, 64, 8, 2, 2, 0))]:
        x, w, g = _conv_case(rng, *shape)
        s, p = shape[5], shape[6]
        cases.append((name + " fwd", lambda b, x=x, w=w, s=s, p=p: b.conv2d_forward(x, w, s, p)))
        cases.append((name + " bwd", lambda b, x=x, w=w, g=g, s=s, p=p: b.conv2d_backward(x, w, g, s, p)))
    for n in (16, 64):
        qa, qb = _quads(rng, n), _quads(rng, n)
        cases.append((f"IoU matrix {n}x{n}", lambda b, qa=qa, qb=qb: b.quad_iou_matrix(qa, qb)))
    print(f"{'kernel':40s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, call in cases:
        tp = _median_time(lambda: call(python_backend), args.repeat)
        tc = _median_time(lambda: call(compiled_backend), args.repeat)
        print(f"{name:40s} {1e3 * tp:11.2f} {1e3 * tc:12.3f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
