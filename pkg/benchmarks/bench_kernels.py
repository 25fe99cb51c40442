#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-python fallback.

Runs the alignment-lattice recursions and the edit-distance table on
realistic desk-scale shapes and prints a speedup table.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from asrfuse import kernels


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_lattice(impl, repeats, T=40, U=12, n=50):
    rng = np.random.default_rng(0)
    grids = []
    for _ in range(n):
        blank = np.log(rng.dirichlet(np.ones(3), size=(T, U + 1))[..., 0])
        label = np.log(rng.dirichlet(np.ones(3), size=(T, U))[..., 0])
        grids.append((np.ascontiguousarray(blank), np.ascontiguousarray(label)))

    def run():
        for blank, label in grids:
            kernels.lattice_alpha(blank, label, impl=impl)
            kernels.lattice_beta(blank, label, impl=impl)

    return time_call(run, repeats)


def bench_edit(impl, repeats, n=400, max_len=14):
    rng = np.random.default_rng(1)
    pairs = [(list(rng.integers(0, 32, size=rng.integers(3, max_len))),
              list(rng.integers(0, 32, size=rng.integers(3, max_len))))
             for _ in range(n)]

    def run():
        for ref, hyp in pairs:
            kernels.edit_counts(ref, hyp, impl=impl)

    return time_call(run, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    impls = {"python": kernels.get_impl("python")}
    try:
        impls["compiled"] = kernels.get_impl("compiled")
    except ImportError:
        print("compiled kernels not built; showing python fallback only")

    rows = []
    for name, bench in (("lattice fwd+bwd (50x T=40,U=12)", bench_lattice),
                        ("edit counts (400 pairs)", bench_edit)):
        times = {tag: bench(impl, args.repeats) for tag, impl in impls.items()}
        rows.append((name, times))

    print(f"{'kernel':<34} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, times in rows:
        py = times["python"]
        if "compiled" in times:
            c = times["compiled"]
            print(f"{name:<34} {py * 1e3:>8.2f}ms {c * 1e3:>8.2f}ms "
                  f"{py / c:>7.1f}x")
        else:
            print(f"{name:<34} {py * 1e3:>8.2f}ms {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
