#!/usr/bin/env python3
"""Timing comparison: compiled kernels vs pure-Python fallbacks.

Runs each hot kernel through its numba-compiled entry point and through the
uncompiled ``.py_func``, printing a speedup table.  Run with
``STEINCOUPLINGS_DISABLE_NUMBA=1`` to confirm the fallback path end to end
(the 'jit' column then simply repeats the fallback timing).

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from steincouplings import _kernels


def timeit(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def plain(fn):
    return getattr(fn, "py_func", fn)


def bench_union_find(repeat):
    rng = np.random.default_rng(0)
    n, m, draws = 2000, 500, 2000
    eu = rng.integers(0, n, size=(draws, m)).astype(np.int64)
    ev = rng.integers(0, n, size=(draws, m)).astype(np.int64)

    def run(fn):
        for k in range(draws):
            fn(n, eu[k], ev[k])

    _kernels.union_find_labels(n, eu[0], ev[0])  # compile
    return (
        f"union_find ({draws} graphs, n={n}, m={m})",
        timeit(run, _kernels.union_find_labels, repeat=repeat),
        timeit(run, plain(_kernels.union_find_labels), repeat=repeat),
    )


def bench_glauber(repeat):
    rng = np.random.default_rng(1)
    n, size, burn, thin = 100, 2000, 1000, 100
    total = burn + thin * (size - 1)
    sites = rng.integers(0, n, size=total).astype(np.int64)
    us = rng.random(total)
    ss = rng.integers(0, n, size=size).astype(np.int64)
    su = rng.random(size)

    def run(fn):
        spins = np.where(np.random.default_rng(2).random(n) < 0.5, -1, 1).astype(np.int8)
        w = np.empty(size)
        wp = np.empty(size)
        g = np.empty(size)
        fn(spins, 0.5, 0.0, sites, us, burn, thin, ss, su, False, w, wp, g)

    run(_kernels.glauber_curie_weiss)  # compile
    return (
        f"glauber ({total} updates, n={n})",
        timeit(run, _kernels.glauber_curie_weiss, repeat=repeat),
        timeit(run, plain(_kernels.glauber_curie_weiss), repeat=repeat),
    )


def bench_remove_balls(repeat):
    rng = np.random.default_rng(3)
    counts = rng.integers(0, 20, size=200).astype(float)
    draws = 3000
    us = rng.random((draws, 50))

    def run(fn):
        for k in range(draws):
            c = counts.copy()
            fn(c, 50, us[k])

    run(_kernels.remove_balls_weighted)  # compile
    return (
        f"remove_balls ({draws} x 50 removals, 200 urns)",
        timeit(run, _kernels.remove_balls_weighted, repeat=repeat),
        timeit(run, plain(_kernels.remove_balls_weighted), repeat=repeat),
    )


def bench_batched_u(repeat):
    rng = np.random.default_rng(4)
    n, draws, m = 2000, 2000, 500
    ne = np.full(draws, m)
    offsets = np.zeros(draws + 1, dtype=np.int64)
    np.cumsum(ne, out=offsets[1:])
    eu = rng.integers(0, n, size=int(offsets[-1])).astype(np.int64)
    ev = rng.integers(0, n, size=int(offsets[-1])).astype(np.int64)
    out = np.empty(draws)

    def run(fn):
        fn(n, eu, ev, offsets, out)

    run(_kernels.batched_same_component_u)  # compile
    return (
        f"batched_same_component_u ({draws} draws)",
        timeit(run, _kernels.batched_same_component_u, repeat=repeat),
        timeit(run, plain(_kernels.batched_same_component_u), repeat=repeat),
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    print(f"numba enabled: {_kernels.NUMBA_ENABLED}")
    print(f"{'kernel':50s} {'jit (s)':>10s} {'python (s)':>12s} {'speedup':>8s}")
    for bench in (bench_union_find, bench_glauber, bench_remove_balls, bench_batched_u):
        name, t_jit, t_py = bench(args.repeat)
        print(f"{name:50s} {t_jit:10.4f} {t_py:12.4f} {t_py / t_jit:8.1f}x")


if __name__ == "__main__":
    main()
