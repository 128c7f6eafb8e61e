"""Compare the numba and numpy paths of the hot kernels.

    python3 benchmarks/bench_kernels.py [--rows 500] [--models 5] [--repeat 200]

Both implementations are imported directly, so the MARLFOCAL_NO_NUMBA flag does
not matter here.  Each kernel is checked for equal output before timing.
"""
import argparse
import timeit

import numpy as np

from marlfocal import kernels


def cases(rows, n, k, rng):
    fail = (rng.random((rows, n)) < 0.3).astype(np.uint8)
    answers = rng.integers(0, k, size=(rows, n)).astype(np.int64)
    outputs = rng.dirichlet(np.ones(k), size=(rows, n))
    members = np.arange(n, dtype=np.int64)
    return {
        "focal_rho": ((fail, members), kernels.focal_rho_numba, kernels.focal_rho_numpy),
        "kappa": ((answers, members, k), kernels.kappa_numba, kernels.kappa_numpy),
        "vote_counts": ((answers, members, k), kernels.vote_counts_numba, kernels.vote_counts_numpy),
        "plurality": ((outputs, members), kernels.plurality_numba, kernels.plurality_numpy),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=500)
    ap.add_argument("--models", type=int, default=5)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"rows={args.rows} models={args.models} k={args.k} repeat={args.repeat}")
    print(f"{'kernel':<12} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for name, (call_args, fast, slow) in cases(args.rows, args.models, args.k, rng).items():
        ref = slow(*call_args)
        got = fast(*call_args)  # also triggers compilation outside the timed region
        if not same(got, ref):
            raise SystemExit(f"{name}: numba and numpy disagree")
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=args.repeat, repeat=3)) / args.repeat
        t_slow = min(timeit.repeat(lambda: slow(*call_args), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<12} {1e6 * t_fast:>10.1f} {1e6 * t_slow:>10.1f} {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
