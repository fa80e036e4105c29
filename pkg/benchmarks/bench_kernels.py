"""Compare the numpy and numba paths of the hot finite-difference kernels.

Run:  python benchmarks/bench_kernels.py [--repeat 20]

Needs numba importable; the numpy path is always available.  Setting
TMFLOW_DISABLE_NUMBA selects the numpy path package-wide, which this script
reports but does not require.
"""

import argparse
import time

import numpy as np

from tmflow import _kernels


def _time(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--n", type=int, default=128, help="grid size")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n = args.n

    u_torus = rng.normal(size=(n, n, 3))
    u_torus /= np.linalg.norm(u_torus, axis=-1, keepdims=True)
    torus_args = (u_torus, 1.0, 0.1, 1.01, 1.0 / n)

    u_cyl = rng.normal(size=(n, n // 2, 3))
    u_cyl /= np.linalg.norm(u_cyl, axis=-1, keepdims=True)
    cyl_args = (u_cyl, 0.05, 0.1)

    v = rng.normal(size=(n, n // 2)) * 0.3
    th = (np.arange(n) + 0.5) * np.pi / n
    ricci_args = (v, np.sin(th), np.sin(np.arange(n + 1) * np.pi / n),
                  np.pi / n, 4.0 * np.pi / n)

    cases = [
        ("torus_rhs", _kernels._torus_rhs_np, _kernels._torus_rhs_loops, torus_args),
        ("collar_rhs", _kernels._collar_rhs_np, _kernels._collar_rhs_loops, cyl_args),
        ("ricci_K", _kernels._ricci_K_np, _kernels._ricci_K_loops, ricci_args),
    ]

    print(f"grid {n}, repeat {args.repeat}, numba available: {_kernels.HAS_NUMBA}, "
          f"active path: {'numba' if _kernels.USE_NUMBA else 'numpy'}")
    header = f"{'kernel':<12} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, np_fn, loop_fn, a in cases:
        t_np = _time(np_fn, a, args.repeat)
        if _kernels.HAS_NUMBA:
            import numba

            jit_fn = numba.njit(cache=True)(loop_fn)
            t_nb = _time(jit_fn, a, args.repeat)
            print(f"{name:<12} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} "
                  f"{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<12} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
