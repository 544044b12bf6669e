"""Sample log-likelihood of the affine regression whitener.

The regression whitener maps a feature vector x (inside the unit box) to a
lower-triangular factor L(x) with

    diag(L(x)) = diag_coef @ x + diag_offset
    lower(L(x)) = lower_coef @ x + lower_offset   (packed row-major)

and optionally to a whitened-space mean shift nu(x) = mean_coef @ x +
mean_offset. The average sample log-likelihood is concave in all parameter
blocks jointly, which is what makes the fitting problem in
:mod:`covcast.solver` tractable.

Feasibility of a parameter set is the row-wise condition

    sum_j |diag_coef[i, j]| <= diag_offset[i] - epsilon

which guarantees diag(L(x)) >= epsilon everywhere on the unit box.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import Dataset
from .errors import DimensionMismatch, NonPositiveDiagonal
from .linalg import LowerTriangular, packed_indices, packed_size

# Samples are always reduced in fixed-size chunks, in chunk order, so the
# result is bit-identical for any thread count.
_CHUNK = 16384


def _frozen(a, shape: tuple[int, ...]) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RegressionParams:
    """Coefficient blocks of the affine regression whitener.

    Shapes, with n outcomes, p features and k = n(n-1)/2 packed
    off-diagonal slots: diag_coef (n, p), diag_offset (n,), lower_coef
    (k, p), lower_offset (k,). The mean blocks are either both present,
    shapes (n, p) and (n,), or both None for a zero-mean model.
    """

    diag_coef: np.ndarray
    diag_offset: np.ndarray
    lower_coef: np.ndarray
    lower_offset: np.ndarray
    mean_coef: np.ndarray | None = None
    mean_offset: np.ndarray | None = None

    def __post_init__(self) -> None:
        b = np.atleast_1d(np.asarray(self.diag_offset, dtype=np.float64))
        n = b.size
        if n == 0:
            raise DimensionMismatch("diag_offset must be non-empty")
        k = packed_size(n)
        a = np.asarray(self.diag_coef, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != n:
            raise DimensionMismatch(
                f"diag_coef shape {a.shape} does not match n={n} rows"
            )
        p = a.shape[1]
        c = np.asarray(self.lower_coef, dtype=np.float64)
        d = np.asarray(self.lower_offset, dtype=np.float64).reshape(-1)
        if c.shape != (k, p):
            raise DimensionMismatch(f"lower_coef shape {c.shape} != ({k}, {p})")
        if d.shape != (k,):
            raise DimensionMismatch(f"lower_offset shape {d.shape} != ({k},)")
        if (self.mean_coef is None) != (self.mean_offset is None):
            raise DimensionMismatch("mean_coef and mean_offset must come together")
        for block in (a, b, c, d):
            if not np.all(np.isfinite(block)):
                raise ValueError("parameter blocks must be finite")
        object.__setattr__(self, "diag_coef", _frozen(a, (n, p)))
        object.__setattr__(self, "diag_offset", _frozen(b, (n,)))
        object.__setattr__(self, "lower_coef", _frozen(c, (k, p)))
        object.__setattr__(self, "lower_offset", _frozen(d, (k,)))
        if self.mean_coef is not None:
            e = np.asarray(self.mean_coef, dtype=np.float64)
            f = np.asarray(self.mean_offset, dtype=np.float64).reshape(-1)
            if e.shape != (n, p) or f.shape != (n,):
                raise DimensionMismatch(
                    f"mean blocks have shapes {e.shape}, {f.shape}; "
                    f"expected ({n}, {p}) and ({n},)"
                )
            if not (np.all(np.isfinite(e)) and np.all(np.isfinite(f))):
                raise ValueError("parameter blocks must be finite")
            object.__setattr__(self, "mean_coef", _frozen(e, (n, p)))
            object.__setattr__(self, "mean_offset", _frozen(f, (n,)))

    @property
    def n(self) -> int:
        return self.diag_offset.size

    @property
    def p(self) -> int:
        return self.diag_coef.shape[1]

    @property
    def with_mean(self) -> bool:
        return self.mean_coef is not None

    @property
    def param_count(self) -> int:
        """Number of free scalars in the covariance part: n(n+1)/2 * (p+1)."""
        return (self.n * (self.n + 1) // 2) * (self.p + 1)

    def factor_at(self, x: np.ndarray) -> LowerTriangular:
        """Whitening factor L(x); raises NonPositiveDiagonal if invalid."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != (self.p,):
            raise DimensionMismatch(f"feature has shape {x.shape}, expected ({self.p},)")
        diag = self.diag_coef @ x + self.diag_offset
        if np.min(diag) <= 0.0:
            raise NonPositiveDiagonal(
                f"diagonal entry {float(np.min(diag)):.6g} at this feature point"
            )
        return LowerTriangular(diag, self.lower_coef @ x + self.lower_offset)

    def mean_shift_at(self, x: np.ndarray) -> np.ndarray | None:
        """Whitened-space mean shift nu(x), or None for zero-mean models."""
        if self.mean_coef is None:
            return None
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        return self.mean_coef @ x + self.mean_offset


@dataclass(frozen=True)
class FitConfig:
    """Options of the regression-whitener fitting problem.

    epsilon is the diagonal floor of the feasibility constraint. lambda1
    penalizes the squared Frobenius norms of the coefficient blocks,
    lambda2 the squared distances of the offsets from the identity factor
    (diag_offset from one, lower_offset from zero). mean_ridge does the
    same for the mean blocks and trace_ridge adds the smooth data-dependent
    penalty mean(||diag(L(x_i))||^2 + ||lower(L(x_i))||^2), a proxy that
    discourages near-singular predicted covariances.
    """

    epsilon: float = 1e-6
    lambda1: float = 0.0
    lambda2: float = 0.0
    mean_ridge: float = 0.0
    trace_ridge: float = 0.0
    max_iters: int = 500
    grad_tolerance: float = 1e-7
    lbfgs_memory: int = 10
    threads: int = 1
    fast_unconstrained: bool = False

    def __post_init__(self) -> None:
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError("epsilon must be positive and finite")
        for name in ("lambda1", "lambda2", "mean_ridge", "trace_ridge"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.max_iters < 1 or self.lbfgs_memory < 1 or self.threads < 1:
            raise ValueError("max_iters, lbfgs_memory and threads must be >= 1")
        if self.grad_tolerance <= 0.0:
            raise ValueError("grad_tolerance must be positive")


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of a feasibility check, with the tightest row's margin."""

    feasible: bool
    min_margin: float
    worst_row: int

    def __bool__(self) -> bool:
        return self.feasible


def check_feasible(params: RegressionParams, epsilon: float) -> FeasibilityReport:
    """Row-wise check that diag(L(x)) stays at or above epsilon on the box.

    The margin of row i is diag_offset[i] - epsilon - sum_j |diag_coef[i, j]|;
    the parameters are feasible when every margin is non-negative.
    """
    margins = params.diag_offset - epsilon - np.sum(np.abs(params.diag_coef), axis=1)
    worst = int(np.argmin(margins))
    return FeasibilityReport(bool(margins[worst] >= 0.0), float(margins[worst]), worst)


def sample_loglik(params: RegressionParams, x: np.ndarray, y: np.ndarray) -> float:
    """Log-likelihood of a single sample under the predicted density.

        -(n/2) log 2 pi + sum_j log L(x)_jj - 0.5 ||L(x)^T y - nu(x)||^2
    """
    factor = params.factor_at(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != (params.n,):
        raise DimensionMismatch(f"outcome has shape {y.shape}, expected ({params.n},)")
    r = factor.dense().T @ y
    nu = params.mean_shift_at(x)
    if nu is not None:
        r = r - nu
    return float(
        -0.5 * params.n * kernels.LOG_2PI + factor.logdet() - 0.5 * float(r @ r)
    )


def _check_dims(params: RegressionParams, data: Dataset) -> None:
    if params.n != data.n_outcomes:
        raise DimensionMismatch(
            f"model has n={params.n} outcomes, data has n={data.n_outcomes}"
        )
    if params.p != data.n_features:
        raise DimensionMismatch(
            f"model has p={params.p} features, data has p={data.n_features}"
        )


def _data_term(params: RegressionParams, x: np.ndarray, y: np.ndarray,
               threads: int, want_grad: bool):
    """Chunked kernel accumulation: (ok, summed value, summed grad blocks)."""
    rows, cols = packed_indices(params.n)
    spans = [(s, min(s + _CHUNK, y.shape[0])) for s in range(0, y.shape[0], _CHUNK)]

    def one(span):
        s, e = span
        return kernels.loglik_grad(
            params.diag_coef, params.diag_offset,
            params.lower_coef, params.lower_offset,
            params.mean_coef, params.mean_offset,
            x[s:e], y[s:e], rows, cols, want_grad,
        )

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, spans))
    else:
        results = [one(span) for span in spans]

    value = 0.0
    blocks = None
    for ok, v, g in results:
        if not ok:
            return False, -np.inf, None
        value += v
        if want_grad:
            if blocks is None:
                blocks = [np.zeros_like(b) if b is not None else None for b in g]
            for acc, b in zip(blocks, g):
                if acc is not None:
                    acc += b
    return True, value, blocks


def _objective_blocks(params: RegressionParams, data: Dataset, config: FitConfig,
                      want_grad: bool = True):
    """Full objective (mean log-likelihood minus penalties) and its gradient.

    Returns (ok, value, blocks); blocks is a tuple matching the parameter
    blocks, or None when want_grad is False or ok is False.
    """
    _check_dims(params, data)
    x = np.ascontiguousarray(data.features)
    y = np.ascontiguousarray(data.outcomes)
    n_samples = data.n_samples

    ok, total, grads = _data_term(params, x, y, config.threads, want_grad)
    if not ok:
        return False, -np.inf, None

    a, b = params.diag_coef, params.diag_offset
    c, d = params.lower_coef, params.lower_offset
    value = total / n_samples
    value -= config.lambda1 * (np.sum(a * a) + np.sum(c * c))
    value -= config.lambda2 * (np.sum((b - 1.0) ** 2) + np.sum(d * d))
    if params.with_mean:
        e, f = params.mean_coef, params.mean_offset
        value -= config.mean_ridge * (np.sum(e * e) + np.sum(f * f))

    trace_grads = None
    if config.trace_ridge > 0.0:
        diag = x @ a.T + b
        lower = x @ c.T + d
        value -= config.trace_ridge * (np.sum(diag * diag) + np.sum(lower * lower)) / n_samples
        if want_grad:
            w = 2.0 * config.trace_ridge / n_samples
            trace_grads = (w * (diag.T @ x), w * diag.sum(axis=0),
                           w * (lower.T @ x), w * lower.sum(axis=0))

    if not want_grad:
        return True, float(value), None

    ga = grads[0] / n_samples - 2.0 * config.lambda1 * a
    gb = grads[1] / n_samples - 2.0 * config.lambda2 * (b - 1.0)
    gc = grads[2] / n_samples - 2.0 * config.lambda1 * c
    gd = grads[3] / n_samples - 2.0 * config.lambda2 * d
    if trace_grads is not None:
        ga = ga - trace_grads[0]
        gb = gb - trace_grads[1]
        gc = gc - trace_grads[2]
        gd = gd - trace_grads[3]
    if params.with_mean:
        ge = grads[4] / n_samples - 2.0 * config.mean_ridge * params.mean_coef
        gf = grads[5] / n_samples - 2.0 * config.mean_ridge * params.mean_offset
    else:
        ge = None
        gf = None
    return True, float(value), (ga, gb, gc, gd, ge, gf)


def objective(params: RegressionParams, data: Dataset, config: FitConfig) -> float:
    """Mean sample log-likelihood minus the configured penalties.

    Raises NonPositiveDiagonal when some sample's factor diagonal is not
    strictly positive under these parameters.
    """
    ok, value, _ = _objective_blocks(params, data, config, want_grad=False)
    if not ok:
        raise NonPositiveDiagonal(
            "factor diagonal is non-positive at some training sample"
        )
    return value


def gradient(params: RegressionParams, data: Dataset, config: FitConfig) -> RegressionParams:
    """Gradient of :func:`objective`, packaged in parameter-block shape."""
    ok, _, blocks = _objective_blocks(params, data, config, want_grad=True)
    if not ok:
        raise NonPositiveDiagonal(
            "factor diagonal is non-positive at some training sample"
        )
    ga, gb, gc, gd, ge, gf = blocks
    return RegressionParams(ga, gb, gc, gd, ge, gf)
