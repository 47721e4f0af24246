"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 2000]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from merank.kernels import available_implementations


def workloads(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        k = int(rng.integers(1, 33))
        cases.append((float(rng.uniform(1, 5)), rng.uniform(1, 5, k), rng.uniform(1e-6, 1 - 1e-6, k),
                      float(rng.choice([0.0, 0.01, 0.1]))))
    probs = rng.uniform(1e-9, 1 - 1e-9, n)
    xs = rng.uniform(-8, 8, n)
    return cases, probs, xs


def bench(mod, cases, probs, xs, repeat: int) -> dict[str, float]:
    def solve():
        for s0, sc, pr, lam in cases:
            mod.solve_exact(s0, sc, pr, lam, -1.0, 7.0)

    def closed():
        for s0, sc, pr, lam in cases:
            mod.closed_form(s0, sc, pr, lam)

    def objective():
        for s0, sc, pr, lam in cases:
            mod.objective(s0, s0, sc, pr, lam)

    def quantile():
        for p in probs:
            mod.ndtri(float(p))

    def cdf():
        for x in xs:
            mod.ndtr(float(x))

    out = {}
    for name, fn in (("solve_exact", solve), ("closed_form", closed), ("objective", objective),
                     ("ndtri", quantile), ("ndtr", cdf)):
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=2000, help="calls per kernel per repeat")
    args = ap.parse_args(argv)

    impls = available_implementations()
    cases, probs, xs = workloads(args.n)
    timings = {name: bench(mod, cases, probs, xs, args.repeat) for name, mod in sorted(impls.items())}
    names = sorted(timings)
    header = f"{'kernel':<12}" + "".join(f"{n + ' (ms)':>16}" for n in names)
    if "cython" in timings and "python" in timings:
        header += f"{'speedup':>10}"
    print(f"{args.n} calls per kernel, best of {args.repeat}")
    print(header)
    for kernel in timings[names[0]]:
        row = f"{kernel:<12}" + "".join(f"{1e3 * timings[n][kernel]:>16.2f}" for n in names)
        if "cython" in timings and "python" in timings:
            row += f"{timings['python'][kernel] / timings['cython'][kernel]:>9.1f}x"
        print(row)
    if len(impls) == 1:
        print("only one implementation available; build the extension to compare")


if __name__ == "__main__":
    main()
