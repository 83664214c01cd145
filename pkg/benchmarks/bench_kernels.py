#!/usr/bin/env python3
"""Time the numba-jitted kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats N]

The same arrays go through both implementations; the table reports best-of-N
wall time per call and the speedup. JIT compilation happens in an untimed
warmup call.
"""

import argparse
import time

import numpy as np

from bodyedit import _kernels as K


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rasterize(rng, repeats):
    # body-mesh-like load: many small triangles on a 512^2 target
    n = 2000
    centers = rng.uniform(0, 512, (n, 1, 2))
    xy = np.ascontiguousarray(centers + rng.uniform(-15, 15, (n, 3, 2)))
    zinv = np.ascontiguousarray(1.0 / rng.uniform(1.0, 6.0, (n, 3)))
    args = (xy, zinv, 512, 512)
    rows = []
    if K.NUMBA_ENABLED:
        K._rasterize_jit(*args)  # warmup / compile
        rows.append(("rasterize 2k tris @512^2", "numba",
                     best_of(K._rasterize_jit, args, repeats)))
    rows.append(("rasterize 2k tris @512^2", "numpy",
                 best_of(K._rasterize_np, args, repeats)))
    return rows


def bench_occlusion(rng, repeats):
    m = 1000
    v = rng.normal(0, 1, (m, 3, 3)) + np.array([0.0, 0.0, 5.0])
    cents = v.mean(axis=1)
    origin = np.zeros(3)
    dirs = np.ascontiguousarray(cents - origin)
    t_max = 1.0 - 1e-6 / np.linalg.norm(dirs, axis=1)
    args = tuple(np.ascontiguousarray(a) for a in (v[:, 0], v[:, 1], v[:, 2])) \
        + (origin, dirs, t_max)
    rows = []
    if K.NUMBA_ENABLED:
        K._occluded_jit(*args)
        rows.append(("occlusion 1k x 1k rays", "numba",
                     best_of(K._occluded_jit, args, repeats)))
    rows.append(("occlusion 1k x 1k rays", "numpy",
                 best_of(K._occluded_np, args, repeats)))
    return rows


def bench_cg(rng, repeats):
    h = w = 66  # 64x64 interior, 4096 unknowns
    region = np.zeros((h, w), bool)
    region[1:-1, 1:-1] = True
    ys, xs = np.nonzero(region)
    n = ys.size
    index = np.full((h, w), -1, np.int64)
    index[ys, xs] = np.arange(n)
    b = rng.normal(0, 1, n)
    nbr = [index[ys + dy, xs + dx] for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1))]
    args = (b, *nbr, 1e-8, 10 * n)
    rows = []
    if K.NUMBA_ENABLED:
        K._cg_jit(*args)
        rows.append(("poisson CG 4096 unknowns", "numba",
                     best_of(K._cg_jit, args, repeats)))
    rows.append(("poisson CG 4096 unknowns", "numpy",
                 best_of(K._cg_np, args, repeats)))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3)
    opts = parser.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    rows += bench_rasterize(rng, opts.repeats)
    rows += bench_occlusion(rng, opts.repeats)
    rows += bench_cg(rng, opts.repeats)

    print(f"numba available: {K.NUMBA_ENABLED}")
    print(f"{'kernel':<28} {'path':<6} {'best (ms)':>10}")
    print("-" * 48)
    by_kernel = {}
    for name, path, seconds in rows:
        print(f"{name:<28} {path:<6} {seconds * 1e3:>10.2f}")
        by_kernel.setdefault(name, {})[path] = seconds
    print()
    for name, paths in by_kernel.items():
        if "numba" in paths and "numpy" in paths:
            print(f"{name}: numba is {paths['numpy'] / paths['numba']:.1f}x faster")


if __name__ == "__main__":
    main()
