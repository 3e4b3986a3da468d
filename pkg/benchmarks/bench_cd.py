"""Compare the compiled and pure-Python coordinate-descent kernels.

    python benchmarks/bench_cd.py [--dims 64 384] [--repeats 5]
"""
import argparse
import time

import numpy as np

from embscope import _kernels


def problem(d, n=5000, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    X[:, 1::2] += 0.5 * X[:, ::2][:, : d // 2]  # correlated pairs slow convergence
    y = X[:, : max(1, d // 8)].sum(axis=1) + rng.standard_normal(n)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    return Z.T @ Z / n, Z.T @ (y - y.mean()) / n


def best_of(fn, gram, corr, alpha, repeats):
    times, w = [], None
    for _ in range(repeats):
        w = np.zeros(gram.shape[0])
        t0 = time.perf_counter()
        sweeps, _ = fn(gram, corr, alpha, w, 1e-6, 1000)
        times.append(time.perf_counter() - t0)
    return min(times), sweeps, w


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, nargs="+", default=[64, 384])
    ap.add_argument("--alpha", type=float, default=0.01)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if _kernels.compiled is None:
        print("compiled kernel not built; only the fallback is available")
    print(f"{'D':>5} {'sweeps':>7} {'python (ms)':>12} {'compiled (ms)':>14} {'speedup':>8} {'identical':>9}")
    for d in args.dims:
        gram, corr = problem(d)
        t_py, sweeps, w_py = best_of(_kernels.fallback.cd_gram, gram, corr, args.alpha, args.repeats)
        if _kernels.compiled is None:
            print(f"{d:>5} {sweeps:>7} {t_py * 1e3:>12.2f} {'-':>14} {'-':>8} {'-':>9}")
            continue
        t_c, _, w_c = best_of(_kernels.compiled.cd_gram, gram, corr, args.alpha, args.repeats)
        same = bool(np.array_equal(w_py, w_c))
        print(f"{d:>5} {sweeps:>7} {t_py * 1e3:>12.2f} {t_c * 1e3:>14.3f} {t_py / t_c:>7.1f}x {str(same):>9}")


if __name__ == "__main__":
    main()
