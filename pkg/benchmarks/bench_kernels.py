#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Runs both paths on the same inputs, checks that they agree, and prints one
line per kernel with the best-of-``--repeat`` wall time.  The numba timing
excludes the first (compiling) call.

    python3 benchmarks/bench_kernels.py [--half-width 20] [--columns 64] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from doslab import kernels
from doslab.heat import build_propagator
from doslab.lattice import RandomPotential, assemble_hamiltonian, build_grid


def best_time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_chebyshev(half_width: float, columns: int, s: float, repeat: int) -> None:
    grid = build_grid(2, half_width, 0.25)
    op = assemble_hamiltonian(grid, RandomPotential(7, 1.0))
    prop = build_propagator(op, s)
    alpha, beta = prop.affine
    coeffs = np.atleast_2d(prop.coeffs)
    X = kernels.counter_signs(0, 0, np.arange(grid.size * columns)).reshape(grid.size, columns)
    args = (op.matrix, X, alpha, beta, coeffs)

    ref = kernels._chebyshev_block_numpy(*args)
    t_np = best_time(lambda: kernels._chebyshev_block_numpy(*args), repeat)
    print(f"chebyshev_block  N={grid.size} m={columns} order={prop.order}")
    print(f"  numpy  {t_np:9.3f} s")
    if kernels.NUMBA_AVAILABLE:
        out = kernels._chebyshev_block_numba(*args)  # compile
        err = float(np.max(np.abs(out - ref)) / np.max(np.abs(ref)))
        t_nb = best_time(lambda: kernels._chebyshev_block_numba(*args), repeat)
        print(f"  numba  {t_nb:9.3f} s   speedup {t_np / t_nb:5.2f}x   max rel diff {err:.1e}")


def bench_counter(n: int, repeat: int) -> None:
    counters = kernels._as_counters(np.arange(n, dtype=np.int64))
    ref = kernels._counter_uniform_numpy(1, 2, counters)
    t_np = best_time(lambda: kernels._counter_uniform_numpy(1, 2, counters), repeat)
    print(f"counter_uniform  n={n}")
    print(f"  numpy  {t_np:9.3f} s")
    if kernels.NUMBA_AVAILABLE:
        out = kernels._counter_uniform_numba(1, 2, counters)
        same = bool(np.array_equal(out, ref))
        t_nb = best_time(lambda: kernels._counter_uniform_numba(1, 2, counters), repeat)
        print(f"  numba  {t_nb:9.3f} s   speedup {t_np / t_nb:5.2f}x   identical {same}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--half-width", type=float, default=20.0)
    ap.add_argument("--columns", type=int, default=64)
    ap.add_argument("--s", type=float, default=1.0)
    ap.add_argument("--counters", type=int, default=4_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"numba available: {kernels.NUMBA_AVAILABLE}; active backend: {kernels.BACKEND}")
    bench_chebyshev(args.half_width, args.columns, args.s, args.repeat)
    bench_counter(args.counters, args.repeat)


if __name__ == "__main__":
    main()
