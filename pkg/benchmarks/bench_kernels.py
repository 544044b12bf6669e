"""Compare the compiled likelihood kernel against the NumPy fallback.

Both backends implement the same contract: summed sample log-likelihood
and gradient blocks over a batch. This script checks they agree on a
random problem, then times each one.

    python3 benchmarks/bench_kernels.py --samples 200000 --repeats 5
"""

import argparse
import time

import numpy as np

from covcast import _loglik_py
from covcast.linalg import packed_indices

try:
    from covcast import _loglik
except ImportError:
    _loglik = None


def make_problem(rng, n_samples, n, p, with_mean):
    diag_coef = rng.uniform(-0.1, 0.1, (n, p))
    diag_off = rng.uniform(0.8, 1.2, n)
    lower_coef = rng.uniform(-0.2, 0.2, (n * (n - 1) // 2, p))
    lower_off = rng.uniform(-0.3, 0.3, n * (n - 1) // 2)
    mean_coef = rng.uniform(-0.2, 0.2, (n, p)) if with_mean else None
    mean_off = rng.uniform(-0.1, 0.1, n) if with_mean else None
    x = rng.uniform(-1.0, 1.0, (n_samples, p))
    y = rng.normal(size=(n_samples, n))
    rows, cols = packed_indices(n)
    return (diag_coef, diag_off, lower_coef, lower_off, mean_coef, mean_off,
            x, y, rows, cols)


def check_agreement(args_tuple):
    ok_a, val_a, grads_a = _loglik_py.loglik_grad(*args_tuple)
    ok_b, val_b, grads_b = _loglik.loglik_grad(*args_tuple)
    assert ok_a and ok_b
    worst = abs(val_a - val_b) / max(1.0, abs(val_a))
    for ga, gb in zip(grads_a, grads_b):
        if ga is not None and ga.size:
            worst = max(worst, float(np.max(np.abs(ga - gb)))
                        / max(1.0, float(np.max(np.abs(ga)))))
    return worst


def time_backend(fn, args_tuple, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args_tuple)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=4, help="outcome dimension n")
    parser.add_argument("--features", type=int, default=5, help="feature dimension p")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--no-mean", action="store_true",
                        help="benchmark without the mean blocks")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    problem = make_problem(rng, args.samples, args.dim, args.features,
                           not args.no_mean)
    print(f"samples {args.samples}, n {args.dim}, p {args.features}, "
          f"mean blocks {'off' if args.no_mean else 'on'}")

    if _loglik is None:
        print("compiled backend unavailable; timing the NumPy fallback only")
    else:
        worst = check_agreement(problem)
        print(f"backend agreement: worst relative difference {worst:.3g}")

    t_py = time_backend(_loglik_py.loglik_grad, problem, args.repeats)
    print(f"python   {t_py * 1e3:8.2f} ms/call  "
          f"{args.samples / t_py / 1e6:6.2f} Msamples/s")
    if _loglik is not None:
        t_c = time_backend(_loglik.loglik_grad, problem, args.repeats)
        print(f"compiled {t_c * 1e3:8.2f} ms/call  "
              f"{args.samples / t_c / 1e6:6.2f} Msamples/s")
        print(f"speedup  {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
