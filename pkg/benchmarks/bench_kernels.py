"""Compare the numba kernels with their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Both variants are called directly, so one process times both regardless of
PERTURBLEARN_DISABLE_NUMBA. The first jitted call (compilation) is excluded.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from perturblearn import _accel, kernels


def lasso_case(n, p, alpha, collinear, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    if collinear:
        X[:, 1:] = X[:, :1] * rng.uniform(0.5, 2, p - 1) + 1e-3 * X[:, 1:]
    y = X @ rng.standard_normal(p) + 0.1 * rng.standard_normal(n)
    G, c = X.T @ X / n, X.T @ y / n
    return lambda f: f(G, c, alpha, 10000, 1e-8)


def split_case(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(n)
    idx = np.arange(n, dtype=np.int64)
    feats = np.arange(p, dtype=np.int64)
    return lambda f: f(X, y, idx, feats)


CASES = [
    ("lasso_cd", "n=2000 p=8 well conditioned", lasso_case(2000, 8, 1e-3, False), kernels._cd_gram_jit, kernels._cd_gram_np),
    ("lasso_cd", "n=2000 p=8 near collinear", lasso_case(2000, 8, 1e-3, True), kernels._cd_gram_jit, kernels._cd_gram_np),
    ("lasso_cd", "n=500 p=40", lasso_case(500, 40, 1e-3, False), kernels._cd_gram_jit, kernels._cd_gram_np),
    ("best_split", "n=500 p=10", split_case(500, 10), kernels._best_split_jit, kernels._best_split_np),
    ("best_split", "n=5000 p=10", split_case(5000, 10), kernels._best_split_jit, kernels._best_split_np),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="also write results here")
    args = ap.parse_args(argv)
    if not _accel.USE_NUMBA:
        print("numba disabled; both columns time the numpy path", file=sys.stderr)

    rows = []
    for kernel, label, case, jit_fn, np_fn in CASES:
        case(jit_fn)  # compile
        times = {}
        for name, fn in (("numba", jit_fn), ("numpy", np_fn)):
            timer = timeit.Timer(lambda: case(fn))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number
        rows.append({
            "kernel": kernel,
            "case": label,
            "numba_s": f"{times['numba']:.3e}",
            "numpy_s": f"{times['numpy']:.3e}",
            "speedup": f"{times['numpy'] / times['numba']:.1f}",
        })

    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            out = csv.DictWriter(fh, fieldnames=list(rows[0]))
            out.writeheader()
            out.writerows(rows)


if __name__ == "__main__":
    main()
