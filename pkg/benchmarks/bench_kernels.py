"""Benchmark the compiled conv kernels against the numpy reference.

Runs the forward and backward convolution on shapes the contrastive encoder
actually sees (sub-trajectory window planes over feature patches) plus one
larger shape, and prints per-call times and the speedup.

Usage: python benchmarks/bench_kernels.py [repeats]
"""
from __future__ import annotations

import sys
import time

import numpy as np

from moda.kernels import reference

try:
    from moda.kernels import _conv as compiled
except ImportError:
    compiled = None


def time_call(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench(shape, out_ch, k, repeats, rng):
    n, c, h, w = shape
    x = rng.standard_normal((n, c, h, w))
    weights = rng.standard_normal((out_ch, c, k, k))
    bias = rng.standard_normal(out_ch)
    dy = rng.standard_normal((n, out_ch, h, w))

    rows = []
    for name, mod in [("python", reference)] + (
        [("compiled", compiled)] if compiled is not None else []
    ):
        fwd = time_call(mod.conv2d_forward, x, weights, bias, repeats=repeats)
        bwd = time_call(mod.conv2d_backward, x, weights, dy, repeats=repeats)
        rows.append((name, fwd, bwd))

    label = f"x={shape} w=({out_ch},{c},{k},{k})"
    for name, fwd, bwd in rows:
        print(f"  {label} [{name:8s}] forward {fwd * 1e3:8.3f} ms  "
              f"backward {bwd * 1e3:8.3f} ms")
    if len(rows) == 2:
        (_, f0, b0), (_, f1, b1) = rows
        print(f"  {label} speedup: forward {f0 / f1:5.2f}x  backward {b0 / b1:5.2f}x")
    return rows


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    rng = np.random.default_rng(0)
    if compiled is None:
        print("compiled extension not available; benchmarking the reference only")
    print(f"repeats per timing: {repeats} (best-of)")
    print("contrastive encoder shapes:")
    bench((32, 15, 5, 5), 16, 3, repeats, rng)   # batch of window planes, desk scale
    bench((96, 15, 5, 5), 16, 3, repeats, rng)   # triplet batch (anchor+pos+neg)
    bench((32, 16, 5, 5), 16, 3, repeats, rng)   # second conv block
    print("larger synthetic shape:")
    bench((16, 8, 32, 32), 16, 3, repeats, rng)
    if compiled is not None:
        x = rng.standard_normal((4, 3, 9, 9))
        weights = rng.standard_normal((5, 3, 3, 3))
        bias = rng.standard_normal(5)
        dy = rng.standard_normal((4, 5, 9, 9))
        y0 = reference.conv2d_forward(x, weights, bias)
        y1 = compiled.conv2d_forward(x, weights, bias)
        g0 = reference.conv2d_backward(x, weights, dy)
        g1 = compiled.conv2d_backward(x, weights, dy)
        worst = max(
            float(np.max(np.abs(y0 - y1))),
            *(float(np.max(np.abs(a - b))) for a, b in zip(g0, g1)),
        )
        print(f"backend agreement: max abs difference {worst:.2e}")


if __name__ == "__main__":
    main()
