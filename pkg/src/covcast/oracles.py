"""Randomized self-checks of the core numerical claims.

Each check draws fresh random instances and verifies a property against
an independent computation: analytic gradients against finite
differences, the solver against a dense parameter grid, concavity of
the objective, whitening round trips, and the rolling-moment recursions
against direct summation. The CLI exposes them as ``covcast
oracle-check``; the test suite calls them with fixed seeds.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .linalg import SymmetricPD, cholesky, covariance_from_whitener
from .objective import FitConfig, RegressionParams, gradient, objective
from .solver import fit_regression
from .whiteners import _ewma_moments, _sma_moments

GRADIENT_TOLERANCE = 1e-5
GRID_TOLERANCE = 1e-6
CONCAVITY_TOLERANCE = 1e-9
ROUNDTRIP_TOLERANCE = 1e-8
RECURSION_TOLERANCE = 1e-10


def _random_params(rng, n: int, p: int, with_mean: bool,
                   epsilon: float = 1e-6) -> RegressionParams:
    """Random parameters strictly feasible on the unit feature box."""
    b = rng.uniform(0.7, 1.7, size=n)
    a = rng.uniform(-1.0, 1.0, size=(n, p))
    if p:
        room = np.maximum(np.sum(np.abs(a), axis=1), 1e-12)
        a = a * (rng.uniform(0.1, 0.8, size=n) * (b - epsilon) / room)[:, None]
    k = n * (n - 1) // 2
    c = rng.normal(size=(k, p)) * 0.3
    d = rng.normal(size=k) * 0.3
    if not with_mean:
        return RegressionParams(a, b, c, d)
    e = rng.normal(size=(n, p)) * 0.3
    f = rng.normal(size=n) * 0.3
    return RegressionParams(a, b, c, d, e, f)


def _random_data(rng, n: int, p: int, n_samples: int) -> Dataset:
    x = rng.uniform(-1.0, 1.0, size=(n_samples, p))
    y = rng.normal(size=(n_samples, n)) * rng.uniform(0.5, 1.5)
    return Dataset(x, y)


def _flatten(params: RegressionParams) -> np.ndarray:
    blocks = [params.diag_coef, params.diag_offset,
              params.lower_coef, params.lower_offset]
    if params.with_mean:
        blocks += [params.mean_coef, params.mean_offset]
    return np.concatenate([b.ravel() for b in blocks])


def _unflatten(vec: np.ndarray, like: RegressionParams) -> RegressionParams:
    n, p = like.n, like.p
    k = n * (n - 1) // 2
    sizes = [n * p, n, k * p, k]
    if like.with_mean:
        sizes += [n * p, n]
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    a = parts[0].reshape(n, p)
    b = parts[1]
    c = parts[2].reshape(k, p)
    d = parts[3]
    if not like.with_mean:
        return RegressionParams(a, b, c, d)
    return RegressionParams(a, b, c, d, parts[4].reshape(n, p), parts[5])


def check_gradient(seed: int = 0, n_points: int = 200,
                   step: float = 1e-6) -> tuple[bool, str]:
    """Analytic gradient against central finite differences.

    Random feasible parameters over outcome dimensions {1, 2, 4} and
    feature dimensions {0, 1, 3}, with and without penalties and mean
    blocks. Agreement is relative to max(1, |difference quotient|).
    """
    rng = np.random.default_rng(seed)
    combos = [(n, p) for n in (1, 2, 4) for p in (0, 1, 3)]
    worst = 0.0
    for t in range(n_points):
        n, p = combos[t % len(combos)]
        with_mean = t % 3 == 1
        config = FitConfig(
            lambda1=0.01 if t % 2 else 0.0,
            lambda2=0.02 if t % 4 < 2 else 0.0,
            mean_ridge=0.005 if with_mean and t % 5 == 0 else 0.0,
        )
        data = _random_data(rng, n, p, 20)
        params = _random_params(rng, n, p, with_mean)
        analytic = _flatten(gradient(params, data, config))
        theta = _flatten(params)
        for i in range(theta.size):
            plus = theta.copy()
            plus[i] += step
            minus = theta.copy()
            minus[i] -= step
            fd = (objective(_unflatten(plus, params), data, config)
                  - objective(_unflatten(minus, params), data, config)) / (2 * step)
            rel = abs(analytic[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
            if rel > GRADIENT_TOLERANCE:
                return False, (
                    f"gradient mismatch at point {t}, coordinate {i} "
                    f"(n={n}, p={p}): analytic {analytic[i]:.10g}, "
                    f"difference quotient {fd:.10g}, relative error {rel:.3g}"
                )
    return True, (f"{n_points} random points, worst relative error {worst:.3g} "
                  f"(tolerance {GRADIENT_TOLERANCE:g})")


def check_grid(seed: int = 0, grid_size: int = 400) -> tuple[bool, str]:
    """Solver optimum against a dense feasible grid for n = 1, p = 1.

    With a scalar outcome the model is d(x) = a x + b and the objective
    is evaluable in closed form on a grid over the feasible box.
    """
    rng = np.random.default_rng(seed)
    n_samples = 50
    x = rng.uniform(-1.0, 1.0, size=(n_samples, 1))
    d_true = 0.6 * x[:, 0] + 1.2
    y = (rng.normal(size=n_samples) / d_true)[:, None]
    data = Dataset(x, y)

    config = FitConfig()
    stage = fit_regression(data, config)
    fitted = objective(stage.params, data, config)

    epsilon = config.epsilon
    a_grid = np.linspace(-3.0, 3.0, grid_size)
    b_grid = np.linspace(epsilon, 3.0, grid_size)
    xs = x[:, 0]
    ys = y[:, 0]
    best = -np.inf
    for b in b_grid:
        feasible = np.abs(a_grid) <= b - epsilon
        if not np.any(feasible):
            continue
        a_ok = a_grid[feasible]
        d = a_ok[:, None] * xs[None, :] + b
        if np.min(d) <= 0.0:
            keep = np.min(d, axis=1) > 0.0
            a_ok, d = a_ok[keep], d[keep]
            if not a_ok.size:
                continue
        values = np.mean(np.log(d) - 0.5 * (d * ys[None, :]) ** 2
                         - 0.5 * np.log(2.0 * np.pi), axis=1)
        best = max(best, float(np.max(values)))
    gap = best - fitted
    ok = gap <= GRID_TOLERANCE
    return ok, (f"solver value {fitted:.10f}, best of {grid_size}x{grid_size} grid "
                f"{best:.10f}, gap {gap:.3g} (tolerance {GRID_TOLERANCE:g})")


def check_concavity(seed: int = 0, n_points: int = 500) -> tuple[bool, str]:
    """Midpoint concavity of the unpenalized objective on random pairs."""
    rng = np.random.default_rng(seed)
    config = FitConfig()
    worst = -np.inf
    for t in range(n_points):
        n = int(rng.integers(1, 4))
        p = int(rng.integers(0, 3))
        with_mean = t % 2 == 1
        data = _random_data(rng, n, p, 30)
        first = _random_params(rng, n, p, with_mean)
        second = _random_params(rng, n, p, with_mean)
        mid = _unflatten((_flatten(first) + _flatten(second)) / 2.0, first)
        deficit = ((objective(first, data, config) + objective(second, data, config)) / 2.0
                   - objective(mid, data, config))
        worst = max(worst, deficit)
        if deficit > CONCAVITY_TOLERANCE:
            return False, (
                f"concavity violated at pair {t} (n={n}, p={p}): midpoint is "
                f"{deficit:.3g} below the chord (tolerance {CONCAVITY_TOLERANCE:g})"
            )
    return True, (f"{n_points} random midpoints, worst chord excess {worst:.3g} "
                  f"(tolerance {CONCAVITY_TOLERANCE:g})")


def check_roundtrip(seed: int = 0, n_matrices: int = 100) -> tuple[bool, str]:
    """Factor to covariance and back reproduces the factor entrywise.

    For random PD matrices: Cholesky factor, the covariance it encodes,
    an independent inversion of that covariance, and a re-factorization
    must land back on the original factor.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_matrices):
        n = int(rng.integers(1, 7))
        r = rng.normal(size=(n, n))
        a = r @ r.T + 0.1 * np.eye(n)
        a = (a + a.T) / 2.0
        factor = cholesky(SymmetricPD(a))
        cov = covariance_from_whitener(factor)
        back = np.linalg.inv(cov.entries)
        refactor = cholesky(SymmetricPD((back + back.T) / 2.0))
        err = float(np.max(np.abs(refactor.dense() - factor.dense())))
        worst = max(worst, err)
        if err > ROUNDTRIP_TOLERANCE:
            return False, (
                f"round trip failed at matrix {t} (n={n}): entrywise error "
                f"{err:.3g} (tolerance {ROUNDTRIP_TOLERANCE:g})"
            )
    return True, (f"{n_matrices} random matrices, worst entrywise error {worst:.3g} "
                  f"(tolerance {ROUNDTRIP_TOLERANCE:g})")


def check_recursions(seed: int = 0, steps: int = 500) -> tuple[bool, str]:
    """Rolling-moment recursions against direct summation."""
    rng = np.random.default_rng(seed)
    n = 3
    y = rng.normal(size=(steps + 60, n))
    worst = 0.0
    for memory in (2, 5, 50):
        recursive = _sma_moments(y, memory, 0.0)[:steps]
        for i in range(recursive.shape[0]):
            window = y[i:i + memory]
            direct = window.T @ window / memory
            worst = max(worst, float(np.max(np.abs(recursive[i] - direct))))
    for half_life in (1.0, 10.0, 63.0):
        gamma = 2.0 ** (-1.0 / half_life)
        recursive = _ewma_moments(y, half_life, 0.0)[:steps]
        for i in range(recursive.shape[0]):
            t = i + n
            weights = gamma ** np.arange(t, 0, -1, dtype=np.float64)
            weights /= weights.sum()
            direct = (y[:t] * weights[:, None]).T @ y[:t]
            worst = max(worst, float(np.max(np.abs(recursive[i] - direct))))
    ok = worst <= RECURSION_TOLERANCE
    return ok, (f"{steps} steps, windows (2, 5, 50), half-lives (1, 10, 63), "
                f"worst absolute error {worst:.3g} "
                f"(tolerance {RECURSION_TOLERANCE:g})")


ALL_CHECKS = (
    ("gradient", check_gradient),
    ("grid", check_grid),
    ("concavity", check_concavity),
    ("roundtrip", check_roundtrip),
    ("recursions", check_recursions),
)


def run_all(seed: int = 0, emit=print) -> bool:
    """Run every check; emit one PASS/FAIL line each. True when all pass."""
    all_ok = True
    for name, check in ALL_CHECKS:
        ok, detail = check(seed)
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok = all_ok and ok
    return all_ok
