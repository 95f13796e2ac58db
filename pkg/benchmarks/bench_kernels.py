#!/usr/bin/env python3
"""Time the nested log-likelihood sweep on both backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 5000 --m 70]

Prints one line per (family, backend) with the best wall time and the
speed-up of the compiled kernel over the numpy path.
"""
import argparse
import time

import numpy as np

from amortized_eig import kernels
from amortized_eig.models import FAMILIES, sample_designs, sample_prior, scaled_identity_model, simulate


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--m", type=int, default=70)
    ap.add_argument("--predictors", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    print(f"N={args.n} M={args.m} N_p={args.predictors} backends={kernels.AVAILABLE}")
    for fam in FAMILIES:
        model = scaled_identity_model(fam, args.predictors)
        r = np.random.default_rng(0)
        d = sample_designs(1, 5, args.predictors, r)[0]
        y = simulate(model, d, sample_prior(model, args.n, r), r)
        inner = sample_prior(model, (args.n, args.m), r)
        res = {}
        for name in kernels.AVAILABLE:
            prev = kernels.set_backend(name)
            try:
                res[name] = best_of(lambda: kernels.loglik_matrix(model, d, inner, y), args.repeat)
            finally:
                kernels.set_backend(prev)
        line = "  ".join(f"{k}={v * 1e3:8.1f} ms" for k, v in res.items())
        if len(res) == 2:
            line += f"  speed-up {res['python'] / res['cython']:5.1f}x"
        print(f"{fam:15s} {line}")


if __name__ == "__main__":
    main()
