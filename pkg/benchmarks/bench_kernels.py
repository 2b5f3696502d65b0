"""Time the numba kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py [--M 64 --N 48 --repeat 5]``.
Prints best-of-``repeat`` wall time per kernel and the max abs difference
between the two paths.
"""

import argparse
import time

import numpy as np

from ehdwaves import _kernels as kern
from ehdwaves.strip import LOWER, StripGrid


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compile for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def operator_inputs(M, N, rng):
    grid = StripGrid(M, N, LOWER)
    shape = (grid.dq.shape[0], grid.dp.shape[0])
    a, b, c = (rng.standard_normal(shape) for _ in range(3))
    return grid.dq, grid.dqq, grid.dp, grid.dpp, a, b, c


def quadrature_inputs(m, nn, rng):
    p_out = -rng.random(m)
    r_nodes = -rng.random((m, nn))
    w_nodes = rng.random((m, nn))
    f_vals = rng.standard_normal((m, nn))
    return True, 3.0, p_out, r_nodes, w_nodes, f_vals


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=64)
    ap.add_argument("--N", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if not kern.HAVE_NUMBA:
        print("numba unavailable or disabled; timing the numpy path only")
    cases = [
        ("assemble_operator", operator_inputs(args.M, args.N, rng),
         kern.assemble_operator_numpy, kern.assemble_operator_numba),
        ("green_quadrature", quadrature_inputs(2048, 64, rng),
         kern.green_quadrature_numpy, kern.green_quadrature_numba),
    ]
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, inputs, f_np, f_nb in cases:
        t_np, out_np = best_of(lambda: f_np(*inputs), args.repeat)
        if f_nb is None:
            print(f"{name:<20}{1e3 * t_np:12.2f}{'-':>12}{'-':>10}{'-':>12}")
            continue
        t_nb, out_nb = best_of(lambda: f_nb(*inputs), args.repeat)
        diff = float(np.max(np.abs(out_np - out_nb)))
        print(f"{name:<20}{1e3 * t_np:12.2f}{1e3 * t_nb:12.2f}{t_np / t_nb:10.1f}{diff:12.2e}")


if __name__ == "__main__":
    main()
