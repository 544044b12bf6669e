"""Likelihood kernel backends: correctness against scipy and mutual parity."""

import numpy as np
import pytest
from scipy import stats

from covcast import kernels
from covcast._loglik_py import loglik_grad as py_loglik_grad
from covcast.linalg import packed_indices, packed_size

BACKENDS = [("python", py_loglik_grad)]
if kernels.BACKEND == "compiled":
    from covcast._loglik import loglik_grad as compiled_loglik_grad

    BACKENDS.append(("compiled", compiled_loglik_grad))


def _random_problem(rng, n, p, n_samples, with_mean):
    k = packed_size(n)
    diag_coef = rng.normal(size=(n, p)) * 0.1
    diag_off = rng.uniform(0.8, 1.5, size=n)
    lower_coef = rng.normal(size=(k, p)) * 0.2
    lower_off = rng.normal(size=k) * 0.2
    if with_mean:
        mean_coef = rng.normal(size=(n, p)) * 0.3
        mean_off = rng.normal(size=n) * 0.3
    else:
        mean_coef = mean_off = None
    x = rng.uniform(-1.0, 1.0, size=(n_samples, p))
    y = rng.normal(size=(n_samples, n))
    for a in (diag_coef, diag_off, lower_coef, lower_off, x, y):
        a.setflags(write=False)
    return diag_coef, diag_off, lower_coef, lower_off, mean_coef, mean_off, x, y


def _scipy_loglik(args):
    """Oracle: per-sample Gaussian logpdf via dense covariance algebra."""
    diag_coef, diag_off, lower_coef, lower_off, mean_coef, mean_off, x, y = args
    n = diag_off.size
    rows, cols = packed_indices(n)
    total = 0.0
    for i in range(x.shape[0]):
        dense = np.zeros((n, n))
        dense[np.arange(n), np.arange(n)] = diag_coef @ x[i] + diag_off
        if rows.size:
            dense[rows, cols] = lower_coef @ x[i] + lower_off
        cov = np.linalg.inv(dense @ dense.T)
        mean = np.zeros(n)
        if mean_coef is not None:
            mean = np.linalg.solve(dense.T, mean_coef @ x[i] + mean_off)
        total += stats.multivariate_normal.logpdf(y[i], mean=mean, cov=cov)
    return total


@pytest.mark.parametrize("backend_name,backend", BACKENDS)
@pytest.mark.parametrize("n,p,with_mean", [
    (1, 0, False), (1, 2, False), (3, 2, False), (3, 2, True), (4, 0, True),
])
def test_value_matches_scipy(backend_name, backend, n, p, with_mean):
    rng = np.random.default_rng(42)
    args = _random_problem(rng, n, p, 12, with_mean)
    rows, cols = packed_indices(n)
    ok, value, _ = backend(*args, rows, cols, False)
    assert ok
    assert value == pytest.approx(_scipy_loglik(args), rel=1e-10, abs=1e-10)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled backend unavailable")
@pytest.mark.parametrize("n,p,with_mean", [
    (1, 0, False), (2, 1, False), (4, 3, True), (5, 2, False),
])
def test_backend_parity(n, p, with_mean):
    rng = np.random.default_rng(7)
    args = _random_problem(rng, n, p, 64, with_mean)
    rows, cols = packed_indices(n)
    ok_a, value_a, grads_a = py_loglik_grad(*args, rows, cols, True)
    ok_b, value_b, grads_b = compiled_loglik_grad(*args, rows, cols, True)
    assert ok_a and ok_b
    assert value_b == pytest.approx(value_a, rel=1e-12, abs=1e-10)
    for ga, gb in zip(grads_a, grads_b):
        if ga is None:
            assert gb is None
            continue
        assert ga.shape == gb.shape
        if ga.size:
            assert np.max(np.abs(ga - gb)) < 1e-10 * max(1.0, np.max(np.abs(ga)))


@pytest.mark.parametrize("backend_name,backend", BACKENDS)
def test_nonpositive_diagonal_flags(backend_name, backend):
    rng = np.random.default_rng(3)
    args = list(_random_problem(rng, 2, 1, 5, False))
    # steep slope drives the diagonal negative somewhere on the box
    bad = np.array([[5.0], [0.0]])
    bad.setflags(write=False)
    args[0] = bad
    rows, cols = packed_indices(2)
    ok, value, grads = backend(*args, rows, cols, True)
    assert not ok
    assert value == -np.inf
    assert grads is None


@pytest.mark.parametrize("backend_name,backend", BACKENDS)
def test_want_grad_false_skips_gradients(backend_name, backend):
    rng = np.random.default_rng(5)
    args = _random_problem(rng, 3, 1, 8, True)
    rows, cols = packed_indices(3)
    ok, value, grads = backend(*args, rows, cols, False)
    assert ok and grads is None
    ok2, value2, grads2 = backend(*args, rows, cols, True)
    assert ok2
    assert value2 == pytest.approx(value, rel=1e-12)
    assert grads2 is not None and len(grads2) == 6


def test_selected_backend_exposed():
    assert kernels.BACKEND in ("compiled", "python")
    assert callable(kernels.loglik_grad)
