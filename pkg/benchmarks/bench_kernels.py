"""Benchmark the compiled coordinate-descent kernel against the numpy
fallback on the two workloads that dominate fit time: Gram-form lasso solves
and full graphical-lasso problems.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from rjm import _cd_py
from rjm.glasso import GlassoProblem, solve

try:
    from rjm import _cd_fast
except ImportError:
    _cd_fast = None


def gram_problem(seed, n, p):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: max(1, p // 10)] = rng.standard_normal(max(1, p // 10))
    y = x @ beta + 0.5 * rng.standard_normal(n)
    return np.ascontiguousarray(x.T @ x), x.T @ y


def time_fn(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_lasso(repeats):
    print(f"{'lasso_cd_gram':<28}{'python':>12}{'compiled':>12}{'speedup':>10}{'max|diff|':>12}")
    for p in (20, 100, 400):
        a, b = gram_problem(0, 4 * p, p)
        lam = 0.1 * np.abs(b).max()
        t_py, (x_py, _, _) = time_fn(
            lambda: _cd_py.lasso_cd_gram(a.copy(), b.copy(), lam, 1e-9, 1000, np.zeros(p)),
            repeats)
        if _cd_fast is None:
            print(f"  p={p:<25}{t_py * 1e3:>10.2f}ms{'n/a':>12}")
            continue
        t_c, (x_c, _, _) = time_fn(
            lambda: _cd_fast.lasso_cd_gram(a, b.copy(), lam, 1e-9, 1000, np.zeros(p)),
            repeats)
        diff = np.abs(np.asarray(x_c) - x_py).max()
        assert diff < 1e-10, f"backends disagree by {diff:g}"
        print(f"  p={p:<25}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms"
              f"{t_py / t_c:>9.1f}x{diff:>12.1e}")


def bench_glasso(repeats):
    print(f"\n{'glasso.solve':<28}{'python':>12}{'compiled':>12}{'speedup':>10}{'max|diff|':>12}")
    import rjm.kernels as kernels
    saved_impl = kernels._impl
    try:
        for p in (20, 50, 100):
            rng = np.random.default_rng(1)
            a = rng.standard_normal((2 * p, p))
            s = a.T @ a / (2 * p)
            prob = GlassoProblem(s=s, rho=0.1)

            kernels._impl = _cd_py
            t_py, om_py = time_fn(lambda: solve(prob), repeats)
            if _cd_fast is None:
                print(f"  p={p:<25}{t_py * 1e3:>10.2f}ms{'n/a':>12}")
                continue
            kernels._impl = _cd_fast
            t_c, om_c = time_fn(lambda: solve(prob), repeats)
            diff = np.abs(om_py - om_c).max()
            assert diff < 1e-8, f"backends disagree by {diff:g}"
            print(f"  p={p:<25}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms"
                  f"{t_py / t_c:>9.1f}x{diff:>12.1e}")
    finally:
        kernels._impl = saved_impl


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if _cd_fast is None:
        print("compiled kernel not available; timing the fallback only\n")
    bench_lasso(args.repeats)
    bench_glasso(args.repeats)


if __name__ == "__main__":
    main()
