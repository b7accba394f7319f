"""Time the numba loop kernels against their numpy twins.

Usage::

    python benchmarks/bench_kernels.py [--sizes 200 400 800] [--repeats 3]

The first numba call of each kernel is compiled before timing starts.
"""
import argparse
import time

import numpy as np

from phenoglrm import _accel, _kernels


def _best(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _inputs(m, n=25, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(m, n))
    is_binary = np.arange(n) % 3 == 0
    values[:, is_binary] = rng.random((m, int(is_binary.sum()))) < 0.5
    ranges = np.where(is_binary, 1.0, np.ptp(values, axis=0))
    weights = np.where(is_binary, 1.7, 1.0)
    return np.ascontiguousarray(values), is_binary, ranges, weights


def run(sizes, repeats, n_clusters=4):
    rows = []
    for m in sizes:
        values, is_binary, ranges, weights = _inputs(m)
        dist = _kernels.NUMPY_KERNELS["gower"](values, is_binary, ranges, weights)
        medoids = _kernels.NUMPY_KERNELS["build"](dist, n_clusters)
        labels = np.argmin(dist[:, medoids], axis=1).astype(np.int64)
        calls = {
            "gower": lambda k: k(values, is_binary, ranges, weights),
            "build": lambda k: k(dist, n_clusters),
            "swap": lambda k: k(dist, medoids.copy(), 100),
            "silhouette": lambda k: k(dist, labels, n_clusters),
        }
        for name, call in calls.items():
            loop, vec = _kernels.LOOP_KERNELS[name], _kernels.NUMPY_KERNELS[name]
            call(loop)  # compile
            t_loop = _best(lambda: call(loop), repeats)
            t_np = _best(lambda: call(vec), repeats)
            rows.append((m, name, t_loop, t_np))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[200, 400, 800])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'m':>6} {'kernel':<11} {'numba s':>10} {'numpy s':>10} {'speedup':>8}")
    for m, name, t_loop, t_np in run(args.sizes, args.repeats):
        print(f"{m:>6} {name:<11} {t_loop:>10.4f} {t_np:>10.4f} {t_np / t_loop:>7.1f}x")


if __name__ == "__main__":
    main()
