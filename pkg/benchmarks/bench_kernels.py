#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Covers patch extraction, patch aggregation, the column-descent
dictionary fit and row shrinkage at the solver's default geometry (256x256, 8 echoes,
12x12 patches, stride 4). Results of both paths are also checked for
agreement.

    python benchmarks/bench_kernels.py [--repeats N] [--size N]
"""

import argparse
import time

import numpy as np

from echodl import dictlearn, patches as pt, prox


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--echoes", type=int, default=8)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cfg = pt.PatchConfig(12, 4)
    dims = (args.size, args.size)
    xr = rng.standard_normal((2 * args.echoes,) + dims)
    orow, ocol = pt.patch_origins(cfg, dims)
    p = cfg.patch_size
    block = np.empty((p * p, orow.size * ocol.size, xr.shape[0]))

    C = rng.standard_normal((72, 20000))
    T = rng.standard_normal((144, 20000))
    gram, cross = C @ C.T, np.asfortranarray(T @ C.T)
    D0 = rng.standard_normal((144, 72))
    D0 /= np.linalg.norm(D0, axis=0)

    V = rng.standard_normal((36, orow.size * ocol.size, xr.shape[0]))
    V2 = V.reshape(-1, V.shape[-1])

    cases = {
        "extract": (
            lambda: pt._extract_numba(xr, orow, ocol, p, block),
            lambda: pt._extract_numpy(xr, orow, ocol, p, block),
        ),
        "aggregate": (
            lambda: pt._aggregate_numba(block, orow, ocol, p, np.zeros_like(xr)),
            lambda: pt._aggregate_numpy(block, orow, ocol, p, np.zeros_like(xr)),
        ),
        "column_descent": (
            lambda: dictlearn._column_descent_numba(np.asfortranarray(D0.copy()), gram, cross, 20, 0.0),
            lambda: dictlearn._column_descent_numpy(D0.copy(), gram, cross, 20, 0.0),
        ),
        "row_shrink": (
            lambda: prox._shrink_rows_numba(V2.copy(), 3.0),
            lambda: prox._shrink_rows_numpy(V2.copy(), 3.0),
        ),
    }

    print(f"{'kernel':<16} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}  agree")
    for name, (nb, npy) in cases.items():
        nb()  # compile
        a, b = np.copy(nb()), np.copy(npy())
        agree = np.allclose(a, b, atol=1e-9)
        t_nb, t_np = best_of(nb, args.repeats), best_of(npy, args.repeats)
        print(f"{name:<16} {1e3 * t_nb:>11.2f} {1e3 * t_np:>11.2f} {t_np / t_nb:>7.1f}x  {agree}")


if __name__ == "__main__":
    main()
