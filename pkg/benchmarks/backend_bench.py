#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the raw hot kernels (3x3 conv forward / weight-gradient, 2x2 max
pool) and a full editor forward pass at training and deployment sizes.

Usage:
    python benchmarks/backend_bench.py [--reps 10]
"""
import argparse
import time

import numpy as np

from interseg.nn import NetworkSpec, build_network, set_backend
from interseg.nn.backends import numba_ops, numpy_ops


def timeit(fn, *args, reps=10):
    fn(*args)  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1000.0


def bench_kernels(reps):
    rng = np.random.default_rng(0)
    cases = [
        ("conv 64x64   c8  b4", (4, 8, 64, 64), (8, 8, 3, 3)),
        ("conv 160x160 c16 b1", (1, 16, 160, 160), (16, 16, 3, 3)),
        ("conv 320x320 c8  b1", (1, 8, 320, 320), (8, 8, 3, 3)),
        ("conv 320x320 c32 b1", (1, 32, 320, 320), (32, 32, 3, 3)),
    ]
    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, xs, ws in cases:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        dy = rng.standard_normal((xs[0], ws[0], xs[2], xs[3])).astype(np.float32)
        t_np = timeit(numpy_ops.conv3x3, x, w, reps=reps)
        t_nb = timeit(numba_ops.conv3x3, x, w, reps=reps)
        print(f"{name:24s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.2f}x")
        t_np = timeit(numpy_ops.conv3x3_dw, x, dy, reps=reps)
        t_nb = timeit(numba_ops.conv3x3_dw, x, dy, reps=reps)
        print(f"{'  weight grad':24s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.2f}x")
    x = rng.standard_normal((4, 16, 64, 64)).astype(np.float32)
    t_np = timeit(lambda a: numpy_ops.maxpool2(a), x, reps=reps)
    t_nb = timeit(lambda a: numba_ops.maxpool2(a), x, reps=reps)
    print(f"{'maxpool 64x64 c16 b4':24s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.2f}x")


def bench_forward(reps):
    rng = np.random.default_rng(1)
    print(f"\n{'full editor forward':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for side, width in ((64, 8), (320, 8), (320, 32)):
        spec = NetworkSpec(in_channels=8, num_classes=3, base_channels=width)
        net = build_network(spec, rng=0)
        x = rng.standard_normal((1, 8, side, side)).astype(np.float32)
        times = {}
        for backend in ("numpy", "numba"):
            set_backend(backend)
            times[backend] = timeit(lambda a: net.forward(a), x,
                                    reps=max(1, reps // 2))
        print(f"{f'{side}x{side} width {width}':24s} {times['numpy']:10.2f} "
              f"{times['numba']:10.2f} {times['numpy'] / times['numba']:7.2f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=10)
    args = parser.parse_args()
    bench_kernels(args.reps)
    bench_forward(args.reps)
