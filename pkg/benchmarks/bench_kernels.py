"""Time the compiled and pure-Python EWMA / MEWMA kernels on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--n 200000] [--q 6] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from scoredrift import kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--q", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    s = rng.standard_normal((args.n, args.q))
    z0 = np.zeros(args.q)
    center = rng.standard_normal(args.q) * 0.01
    a = rng.standard_normal((args.q, args.q))
    whitener = np.linalg.cholesky(np.linalg.inv(a @ a.T + np.eye(args.q)))

    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    results = {}
    for b in backends:
        t_mewma = min(timeit.repeat(lambda: kernels.mewma_t2(s, z0, center, whitener, 0.01, backend=b),
                                    number=1, repeat=args.repeat))
        t_ewma = min(timeit.repeat(lambda: kernels.ewma(s, z0, 0.01, backend=b),
                                   number=1, repeat=args.repeat))
        results[b] = (t_mewma, t_ewma)
        print(f"{b:>7}: mewma_t2 {t_mewma * 1e3:8.2f} ms   ewma {t_ewma * 1e3:8.2f} ms   "
              f"(n={args.n}, q={args.q})")
    if len(results) == 2:
        (pm, pe), (cm, ce) = results["python"], results["cython"]
        print(f"speedup: mewma_t2 x{pm / cm:.1f}   ewma x{pe / ce:.1f}")
        t_py, _ = kernels.mewma_t2(s, z0, center, whitener, 0.01, backend="python")
        t_cy, _ = kernels.mewma_t2(s, z0, center, whitener, 0.01, backend="cython")
        print(f"max |T2 difference|: {np.max(np.abs(t_py - t_cy)):.3e}")
    else:
        print("compiled backend unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
