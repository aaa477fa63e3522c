"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and backend with the best wall time and the
maximum deviation from the fallback result.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from latticespread.kernels import backends


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_trig_sums(repeat, R=20000, n=1024):
    r = np.arange(1, R + 1, dtype=float)
    coef = (1.0 / r**3).astype(np.complex128)
    k = np.linspace(-np.pi, np.pi, n, endpoint=False)
    rows = []
    ref = None
    for name, mod in sorted(backends().items(), key=lambda kv: kv[0] != "python"):
        t, (C, S) = _best(lambda: mod.trig_sums(coef, k), repeat)
        if ref is None:
            ref = (C, S)
        err = max(np.max(np.abs(C - ref[0])), np.max(np.abs(S - ref[1])))
        rows.append(("trig_sums", name, f"R={R} n={n}", t, err))
    return rows


def bench_marching_squares(repeat, n=512):
    x = np.linspace(-np.pi, np.pi, n, endpoint=False)
    X, Y = np.meshgrid(x, x)
    f = np.ascontiguousarray(np.cos(X) * np.cos(Y) - 0.3 + 0.1 * np.sin(3 * X))
    rows = []
    ref = None
    for name, mod in sorted(backends().items(), key=lambda kv: kv[0] != "python"):
        t, seg = _best(lambda: mod.marching_squares(f, True), repeat)
        seg = np.asarray(seg)
        key = np.sort(np.sort(seg, axis=1), axis=0)
        if ref is None:
            ref = key
        same = key.shape == ref.shape and bool(np.all(key == ref))
        rows.append(("marching_squares", name, f"{n}x{n}", t, 0.0 if same else float("nan")))
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rows = bench_trig_sums(args.repeat) + bench_marching_squares(args.repeat)
    base = {r[0]: r[3] for r in rows if r[1] == "python"}
    print(f"{'kernel':<18}{'backend':<10}{'size':<16}{'best [ms]':>11}{'speedup':>9}{'max dev':>11}")
    for kernel, name, size, t, err in rows:
        print(f"{kernel:<18}{name:<10}{size:<16}{1e3 * t:>11.2f}{base[kernel] / t:>9.1f}{err:>11.1e}")


if __name__ == "__main__":
    main()
