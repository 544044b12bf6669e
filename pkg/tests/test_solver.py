"""The box-constrained limited-memory quasi-Newton solver and the fits built on it."""

import numpy as np
import pytest

from covcast import Dataset, FitConfig
from covcast.errors import SingularCovariance
from covcast.objective import RegressionParams, check_feasible, objective
from covcast.solver import (
    BoxProblem,
    SolveStatus,
    SplitEncoding,
    fit_diagonal,
    fit_joint,
    fit_regression,
    minimize,
)

from conftest import dense_factors, planted_dataset


def _unbounded(dim):
    return np.full(dim, -np.inf), np.full(dim, np.inf)


def test_quadratic_converges_quickly():
    rng = np.random.default_rng(0)
    dim = 6
    r = rng.normal(size=(dim, dim))
    q = r @ r.T + np.eye(dim)
    center = rng.normal(size=dim)

    def evaluate(x):
        d = x - center
        return 0.5 * d @ q @ d, q @ d

    lower, upper = _unbounded(dim)
    result = minimize(BoxProblem(lower, upper, evaluate), np.zeros(dim))
    assert result.status == SolveStatus.CONVERGED
    assert result.iterations <= 2 * dim + 4
    assert np.allclose(result.x, center, atol=1e-6)


def test_rosenbrock():
    def evaluate(x):
        a, b = x
        value = (1 - a) ** 2 + 100.0 * (b - a * a) ** 2
        grad = np.array([
            -2.0 * (1 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ])
        return value, grad

    lower, upper = _unbounded(2)
    result = minimize(BoxProblem(lower, upper, evaluate),
                      np.array([-1.2, 1.0]), max_iters=300)
    assert result.status == SolveStatus.CONVERGED
    assert np.allclose(result.x, [1.0, 1.0], atol=1e-6)


def test_active_bound_solution():
    target = np.array([2.0, 2.0, -0.5])

    def evaluate(x):
        d = x - target
        return 0.5 * d @ d, d

    problem = BoxProblem(np.full(3, -1.0), np.full(3, 1.0), evaluate)
    result = minimize(problem, np.zeros(3))
    assert result.status == SolveStatus.CONVERGED
    # coordinates chased beyond the box stop exactly on it
    assert np.allclose(result.x, [1.0, 1.0, -0.5], atol=1e-10)
    assert result.x[0] == 1.0 and result.x[1] == 1.0


def test_value_history_monotone():
    rng = np.random.default_rng(1)
    dim = 8
    r = rng.normal(size=(dim, dim))
    q = r @ r.T + 0.5 * np.eye(dim)

    def evaluate(x):
        return 0.5 * x @ q @ x + np.sum(np.cos(x)), q @ x - np.sin(x)

    lower, upper = _unbounded(dim)
    result = minimize(BoxProblem(lower, upper, evaluate), rng.normal(size=dim))
    history = np.asarray(result.value_history)
    assert np.all(np.diff(history) <= 1e-12)


def test_minimize_rejects_bad_start():
    def evaluate(x):
        return float(x[0] ** 2), 2.0 * x

    problem = BoxProblem(np.array([-1.0]), np.array([1.0]), evaluate)
    with pytest.raises(ValueError):
        minimize(problem, np.array([np.nan]))


def test_split_encoding_round_trip():
    enc = SplitEncoding(n=2, p=1, epsilon=1e-6, with_mean=False)
    params = RegressionParams(np.array([[0.3], [-0.2]]), np.array([1.1, 0.9]),
                              np.array([[0.4]]), np.array([0.25]))
    decoded = enc.decode(enc.encode(params))
    assert np.allclose(decoded.diag_coef, params.diag_coef, atol=1e-12)
    assert np.allclose(decoded.diag_offset, params.diag_offset, atol=1e-12)
    assert np.allclose(decoded.lower_coef, params.lower_coef)
    assert check_feasible(decoded, 1e-6).feasible


def test_split_decode_always_feasible():
    rng = np.random.default_rng(2)
    enc = SplitEncoding(n=3, p=2, epsilon=1e-6, with_mean=True)
    lower = enc.lower_bounds()
    upper = enc.upper_bounds()
    for _ in range(200):
        v = rng.uniform(0.0, 2.0, size=enc.dim)
        v = np.clip(v, lower, upper)
        params = enc.decode(v)
        assert check_feasible(params, 1e-6).feasible


def test_fit_regression_recovers_planted_parameters(rng):
    true = RegressionParams(np.array([[0.5], [-0.3]]), np.array([1.2, 0.9]),
                            np.array([[0.4]]), np.array([0.3]))
    data = planted_dataset(rng, true, 6000)
    stage = fit_regression(data, FitConfig())
    got = stage.params
    assert np.max(np.abs(got.diag_coef - true.diag_coef)) < 0.1
    assert np.max(np.abs(got.diag_offset - true.diag_offset)) < 0.1
    assert np.max(np.abs(got.lower_coef - true.lower_coef)) < 0.1
    assert np.max(np.abs(got.lower_offset - true.lower_offset)) < 0.1
    assert check_feasible(got, FitConfig().epsilon).feasible


def test_fit_regression_deterministic(rng):
    true = RegressionParams(np.array([[0.4], [-0.2]]), np.array([1.0, 1.1]),
                            np.array([[0.2]]), np.array([0.1]))
    data = planted_dataset(rng, true, 2000)
    first = fit_regression(data, FitConfig()).params
    second = fit_regression(data, FitConfig()).params
    assert np.array_equal(first.diag_coef, second.diag_coef)
    assert np.array_equal(first.diag_offset, second.diag_offset)
    assert np.array_equal(first.lower_coef, second.lower_coef)
    assert np.array_equal(first.lower_offset, second.lower_offset)


def test_fast_unconstrained_agrees_with_split(rng):
    true = RegressionParams(np.array([[0.3], [-0.25]]), np.array([1.1, 1.0]),
                            np.array([[0.3]]), np.array([0.2]))
    data = planted_dataset(rng, true, 4000)
    config = FitConfig()
    split_params = fit_regression(data, config).params
    fast_params = fit_regression(
        data, FitConfig(fast_unconstrained=True)).params
    assert check_feasible(fast_params, config.epsilon).feasible
    v_split = objective(split_params, data, config)
    v_fast = objective(fast_params, data, config)
    assert abs(v_split - v_fast) < 1e-6
    assert np.max(np.abs(split_params.diag_coef - fast_params.diag_coef)) < 1e-3


def test_fit_joint_recovers_mean(rng):
    true = RegressionParams(np.array([[0.4], [-0.3]]), np.array([1.1, 0.9]),
                            np.array([[0.3]]), np.array([0.2]),
                            np.array([[0.5], [-0.4]]), np.array([0.3, 0.2]))
    data = planted_dataset(rng, true, 8000)
    stage = fit_joint(data, FitConfig())
    got = stage.params
    assert got.with_mean
    assert np.max(np.abs(got.mean_coef - true.mean_coef)) < 0.1
    assert np.max(np.abs(got.mean_offset - true.mean_offset)) < 0.1


def test_fit_diagonal_featureless_closed_form(rng):
    y = rng.normal(size=(500, 3)) * np.array([0.5, 1.0, 2.0])
    data = Dataset(np.empty((500, 0)), y)
    stage = fit_diagonal(data)
    # with no features the optimum is the log mean square, per row
    expected = np.log(np.mean(y * y, axis=0))
    assert np.allclose(stage.params.offset, expected, atol=1e-7)
    assert stage.params.coef.shape == (3, 0)


def test_fit_diagonal_captures_feature_effect(rng):
    n_samples = 6000
    x = rng.uniform(-1, 1, size=(n_samples, 1))
    scale = np.exp(0.5 * (0.8 * x[:, 0] + 0.1))
    y = np.column_stack([rng.normal(size=n_samples) * scale,
                         rng.normal(size=n_samples)])
    stage = fit_diagonal(Dataset(x, y))
    assert stage.params.coef[0, 0] == pytest.approx(0.8, abs=0.1)
    assert stage.params.coef[1, 0] == pytest.approx(0.0, abs=0.1)


def test_fit_diagonal_rejects_zero_column(rng):
    y = np.column_stack([rng.normal(size=50), np.zeros(50)])
    with pytest.raises(SingularCovariance):
        fit_diagonal(Dataset(np.empty((50, 0)), y))


def test_isotropic_quadratic_converges_almost_immediately():
    dim = 6
    center = np.arange(1.0, dim + 1.0)

    def evaluate(v):
        d = v - center
        return 0.5 * float(d @ d), d

    lower, upper = _unbounded(dim)
    result = minimize(BoxProblem(lower, upper, evaluate), np.zeros(dim))
    assert result.status == SolveStatus.CONVERGED
    assert result.iterations <= dim + 5
    assert np.allclose(result.x, center, atol=1e-6)


def test_fit_regression_identity_moment_data():
    # two outcome rows whose empirical second moment is exactly I
    y = np.sqrt(2.0) * np.eye(2)
    data = Dataset(np.empty((2, 0)), y)
    config = FitConfig()
    got = fit_regression(data, config).params
    assert np.allclose(got.diag_offset, 1.0, atol=1e-4)
    assert np.allclose(got.lower_offset, 0.0, atol=1e-4)
    identity = RegressionParams(np.zeros((2, 0)), np.ones(2),
                                np.zeros((1, 0)), np.zeros(1))
    assert objective(got, data, config) >= objective(identity, data, config) - 1e-9


def test_fit_diagonal_heavy_ridge_drops_slopes(rng):
    x = rng.uniform(-1.0, 1.0, size=(800, 1))
    y = rng.normal(size=(800, 2)) * np.exp(0.5 * 0.6 * x)
    heavy = fit_diagonal(Dataset(x, y), ridge=1e6).params
    assert np.max(np.abs(heavy.coef)) < 1e-3
    expected = np.log(np.mean(y * y, axis=0))
    assert np.allclose(heavy.offset, expected, atol=1e-3)


def test_fit_diagonal_separates_across_rows(rng):
    x = rng.uniform(-1.0, 1.0, size=(600, 2))
    y = rng.normal(size=(600, 2)) * np.exp(0.5 * x)
    joint = fit_diagonal(Dataset(x, y)).params
    for j in range(2):
        alone = fit_diagonal(Dataset(x, y[:, [j]])).params
        assert np.array_equal(joint.coef[j], alone.coef[0])
        assert joint.offset[j] == alone.offset[0]


def test_fit_joint_constant_mean_shift(rng):
    mu = np.array([0.7, -0.4])
    y = rng.normal(size=(6000, 2)) + mu
    data = Dataset(np.empty((6000, 0)), y)
    got = fit_joint(data, FitConfig()).params
    factor = dense_factors(got, np.empty((1, 0)))[0]
    # the whitened shift nu maps back to an outcome-space mean L^-T nu
    implied = np.linalg.solve(factor.T, got.mean_offset)
    assert np.allclose(implied, mu, atol=0.05)


def test_fit_joint_heavy_mean_ridge_matches_zero_mean_fit(rng):
    true = RegressionParams(np.array([[0.4], [-0.3]]), np.array([1.1, 0.9]),
                            np.array([[0.3]]), np.array([0.2]),
                            np.array([[0.5], [-0.4]]), np.array([0.3, 0.2]))
    data = planted_dataset(rng, true, 3000)
    heavy = fit_joint(data, FitConfig(mean_ridge=1e4, max_iters=2000)).params
    assert np.max(np.abs(heavy.mean_coef)) < 1e-3
    assert np.max(np.abs(heavy.mean_offset)) < 1e-3
    base = fit_regression(data, FitConfig()).params
    assert np.allclose(heavy.diag_coef, base.diag_coef, atol=1e-3)
    assert np.allclose(heavy.diag_offset, base.diag_offset, atol=1e-3)
    assert np.allclose(heavy.lower_coef, base.lower_coef, atol=1e-3)
    assert np.allclose(heavy.lower_offset, base.lower_offset, atol=1e-3)
