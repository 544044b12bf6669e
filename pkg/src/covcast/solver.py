"""Box-constrained concave maximum-likelihood fitting.

The optimizer is written here rather than imported: a projected
limited-memory BFGS for smooth minimization subject to box bounds. Each
iteration identifies the bound-active variables from the sign of the
gradient, builds a quasi-Newton direction on the free variables with the
two-loop recursion, and runs a strong-Wolfe line search along the segment
that stays inside the box (truncated at the first bound it would cross).
Accepted iterates are monotone in the objective.

Fitting the regression whitener is a concave maximization with the
feasibility constraint sum_j |diag_coef[i, j]| <= diag_offset[i] - epsilon.
It is reduced to a box-bounded problem by the split change of variables

    diag_coef = pos - neg,   diag_offset = (pos + neg) 1 + epsilon + slack

with pos, neg, slack >= 0, which makes every box point feasible by
construction. A fast unconstrained path can skip the split and re-solve
with it only if the unconstrained optimum is infeasible.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dataset import Dataset
from .errors import LineSearchFailure, SingularCovariance, SolverFailure
from .kernels import LOG_2PI
from .linalg import packed_size
from .objective import (
    FitConfig,
    RegressionParams,
    _objective_blocks,
    check_feasible,
)
from .whiteners import DiagonalParams, WhitenerStage

logger = logging.getLogger(__name__)

# Curvature pairs are kept only when s.y clears this fraction of |s||y|.
_CURVATURE_RTOL = 1e-10
# Distance (relative to 1 + |x|) at which a coordinate counts as sitting on
# its bound for active-set purposes.
_BOUND_BAND = 1e-10


class SolveStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class BoxProblem:
    """Smooth minimization over a box.

    ``evaluate`` returns (value, gradient) at a point inside the bounds;
    it may return an infinite value outside the objective's domain.
    Bounds may be -inf/+inf where a coordinate is unconstrained.
    """

    lower: np.ndarray
    upper: np.ndarray
    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray]]

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    status: SolveStatus
    iterations: int
    n_evals: int
    projected_grad_norm: float
    value_history: list[float] = field(default_factory=list)


def _two_loop(grad: np.ndarray, pairs) -> np.ndarray:
    """Limited-memory inverse-Hessian product H @ grad."""
    q = grad.copy()
    if not pairs:
        return q
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _cubic_step(a0, f0, d0, a1, f1, d1):
    """Minimizer of the cubic fitting two (point, value, slope) pairs."""
    with np.errstate(all="ignore"):
        g = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1)
        disc = g * g - d0 * d1
        if not np.isfinite(disc) or disc < 0.0:
            return None
        root = np.sqrt(disc) * (1.0 if a1 >= a0 else -1.0)
        denom = d1 - d0 + 2.0 * root
        if denom == 0.0 or not np.isfinite(denom):
            return None
        step = a1 - (a1 - a0) * (d1 + root - g) / denom
    return float(step) if np.isfinite(step) else None


def _zoom(phi, lo, f_lo, d_lo, hi, f_hi, d_hi, f0, df0, c1, c2, max_iters=30):
    """Narrow a bracketing interval to a strong-Wolfe step."""
    for _ in range(max_iters):
        step = None
        if np.isfinite(f_hi):
            step = _cubic_step(lo, f_lo, d_lo, hi, f_hi, d_hi)
        width = abs(hi - lo)
        inner_lo = min(lo, hi) + 0.1 * width
        inner_hi = max(lo, hi) - 0.1 * width
        if step is None or not (inner_lo <= step <= inner_hi):
            step = 0.5 * (lo + hi)
        f, d = phi(step)
        if not np.isfinite(f) or f > f0 + c1 * step * df0 or f >= f_lo:
            hi, f_hi, d_hi = step, f, d
        else:
            if abs(d) <= -c2 * df0:
                return step, f, d
            if d * (hi - lo) >= 0.0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo = step, f, d
        if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
            break
    # Interval collapsed; keep the sufficient-decrease point if we have one.
    if lo > 0.0 and np.isfinite(f_lo) and f_lo <= f0 + c1 * lo * df0:
        return lo, f_lo, d_lo
    return None


def _line_search(phi, f0, df0, alpha_max, c1, c2, max_evals=25):
    """Strong-Wolfe search on (0, alpha_max]; returns (alpha, f, slope)."""
    a_prev, f_prev, d_prev = 0.0, f0, df0
    alpha = min(1.0, alpha_max)
    if alpha <= 0.0:
        return None
    for i in range(max_evals):
        f, d = phi(alpha)
        if not np.isfinite(f) or f > f0 + c1 * alpha * df0 or (i > 0 and f >= f_prev):
            return _zoom(phi, a_prev, f_prev, d_prev, alpha, f, d, f0, df0, c1, c2)
        if abs(d) <= -c2 * df0:
            return alpha, f, d
        if d >= 0.0:
            return _zoom(phi, alpha, f, d, a_prev, f_prev, d_prev, f0, df0, c1, c2)
        if alpha >= alpha_max * (1.0 - 1e-12):
            # Still descending when the segment meets the box; take the bound.
            return alpha, f, d
        a_prev, f_prev, d_prev = alpha, f, d
        alpha = min(4.0 * alpha, alpha_max)
    return None


def minimize(problem: BoxProblem, start: np.ndarray, *, memory: int = 10,
             max_iters: int = 500, grad_tol: float = 1e-7,
             wolfe_c1: float = 1e-4, wolfe_c2: float = 0.9) -> MinimizeResult:
    """Minimize a smooth function over a box.

    Convergence is declared when the projected gradient
    ``x - clip(x - g, lower, upper)`` has infinity norm at most grad_tol.
    The returned iterate always lies inside the bounds exactly, and the
    sequence of accepted objective values is non-increasing.
    """
    lower = np.asarray(problem.lower, dtype=np.float64)
    upper = np.asarray(problem.upper, dtype=np.float64)
    start = np.asarray(start, dtype=np.float64)
    if np.any(np.isnan(start)):
        raise ValueError("starting point contains NaN")
    x = np.clip(start.copy(), lower, upper)

    n_evals = 0

    def evaluate(point):
        nonlocal n_evals
        n_evals += 1
        f, g = problem.evaluate(point)
        return float(f), np.asarray(g, dtype=np.float64)

    f, g = evaluate(x)
    if not np.isfinite(f):
        return MinimizeResult(x, f, g, SolveStatus.LINE_SEARCH_FAILURE, 0,
                              n_evals, np.inf, [f])
    history = [f]
    pairs: deque = deque(maxlen=memory)
    status = SolveStatus.MAX_ITERS
    iteration = 0

    for iteration in range(max_iters + 1):
        pg = x - np.clip(x - g, lower, upper)
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if pg_norm <= grad_tol:
            status = SolveStatus.CONVERGED
            break
        if iteration == max_iters:
            status = SolveStatus.MAX_ITERS
            break

        band = _BOUND_BAND * (1.0 + np.abs(x))
        at_lower = (x - lower) <= band
        at_upper = (upper - x) <= band
        active = (at_lower & (g > 0.0)) | (at_upper & (g < 0.0))
        free_g = np.where(active, 0.0, g)

        d = -_two_loop(free_g, pairs)
        d[active] = 0.0
        d = np.where(at_lower, np.maximum(d, 0.0), d)
        d = np.where(at_upper, np.minimum(d, 0.0), d)
        dg = float(d @ g)
        if not np.isfinite(dg) or dg >= 0.0:
            # Stale curvature produced a non-descent direction; restart from
            # the projected steepest descent.
            pairs.clear()
            d = -free_g
            d = np.where(at_lower, np.maximum(d, 0.0), d)
            d = np.where(at_upper, np.minimum(d, 0.0), d)
            dg = float(d @ g)
            if not np.isfinite(dg) or dg >= 0.0:
                status = SolveStatus.LINE_SEARCH_FAILURE
                break

        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(d > 0.0, (upper - x) / d,
                              np.where(d < 0.0, (lower - x) / d, np.inf))
        ratios = np.where(np.isnan(ratios), np.inf, ratios)
        alpha_max = float(np.min(ratios, initial=np.inf))
        if alpha_max <= 0.0:
            status = SolveStatus.LINE_SEARCH_FAILURE
            break
        binding = ratios <= alpha_max * (1.0 + 1e-12)

        cache: dict[float, tuple[np.ndarray, float, np.ndarray]] = {}

        def phi(alpha, _x=x, _d=d, _binding=binding, _alpha_max=alpha_max,
                _cache=cache):
            xt = _x + alpha * _d
            if np.isfinite(_alpha_max) and alpha >= _alpha_max * (1.0 - 1e-12):
                xt = np.where(_binding & (_d > 0.0), upper, xt)
                xt = np.where(_binding & (_d < 0.0), lower, xt)
            xt = np.clip(xt, lower, upper)
            ft, gt = evaluate(xt)
            _cache[alpha] = (xt, ft, gt)
            slope = float(gt @ _d) if np.all(np.isfinite(gt)) else np.nan
            return ft, slope

        found = _line_search(phi, f, dg, alpha_max, wolfe_c1, wolfe_c2)
        if found is None:
            status = SolveStatus.LINE_SEARCH_FAILURE
            break
        alpha, _, _ = found
        x_new, f_new, g_new = cache[alpha]

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        s_norm = float(np.linalg.norm(s))
        y_norm = float(np.linalg.norm(y))
        if np.isfinite(sy) and sy > _CURVATURE_RTOL * s_norm * y_norm and sy > 0.0:
            pairs.append((s, y, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        history.append(f)

    pg = x - np.clip(x - g, lower, upper)
    pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
    return MinimizeResult(x, f, g, status, iteration, n_evals, pg_norm, history)


class SplitEncoding:
    """Flat encoding of regression parameters with built-in feasibility.

    Layout: [pos (n*p), neg (n*p), slack (n), lower_coef (k*p),
    lower_offset (k), mean_coef (n*p), mean_offset (n)], the mean blocks
    present only for joint models. pos, neg and slack carry lower bound
    zero; everything else is unbounded.
    """

    def __init__(self, n: int, p: int, epsilon: float, with_mean: bool):
        self.n = n
        self.p = p
        self.k = packed_size(n)
        self.epsilon = float(epsilon)
        self.with_mean = with_mean
        sizes = [n * p, n * p, n, self.k * p, self.k]
        if with_mean:
            sizes += [n * p, n]
        bounds = np.cumsum([0] + sizes)
        self.slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self.dim = int(bounds[-1])

    def lower_bounds(self) -> np.ndarray:
        out = np.full(self.dim, -np.inf)
        for s in self.slices[:3]:
            out[s] = 0.0
        return out

    def upper_bounds(self) -> np.ndarray:
        return np.full(self.dim, np.inf)

    def identity_start(self) -> np.ndarray:
        """Encoding of the identity whitener (or its nearest feasible point)."""
        v = np.zeros(self.dim)
        v[self.slices[2]] = max(1.0 - self.epsilon, 0.0)
        return v

    def encode(self, params: RegressionParams) -> np.ndarray:
        """Encode parameters, projecting an infeasible point onto the box."""
        v = np.zeros(self.dim)
        pos = np.maximum(params.diag_coef, 0.0)
        neg = np.maximum(-params.diag_coef, 0.0)
        slack = params.diag_offset - self.epsilon - pos.sum(axis=1) - neg.sum(axis=1)
        v[self.slices[0]] = pos.ravel()
        v[self.slices[1]] = neg.ravel()
        v[self.slices[2]] = np.maximum(slack, 0.0)
        v[self.slices[3]] = params.lower_coef.ravel()
        v[self.slices[4]] = params.lower_offset
        if self.with_mean:
            v[self.slices[5]] = params.mean_coef.ravel()
            v[self.slices[6]] = params.mean_offset
        return v

    def decode(self, v: np.ndarray) -> RegressionParams:
        n, p, k = self.n, self.p, self.k
        pos = v[self.slices[0]].reshape(n, p)
        neg = v[self.slices[1]].reshape(n, p)
        slack = v[self.slices[2]]
        a = pos - neg
        b = pos.sum(axis=1) + neg.sum(axis=1) + self.epsilon + slack
        # Rounding in the sums can leave a margin a few ulps negative; nudge
        # the offsets so the exact feasibility check always passes.
        l1 = np.sum(np.abs(a), axis=1)
        for _ in range(5):
            margins = b - self.epsilon - l1
            if not np.any(margins < 0.0):
                break
            b = np.where(margins < 0.0, np.nextafter(b - margins, np.inf), b)
        mean_coef = mean_off = None
        if self.with_mean:
            mean_coef = v[self.slices[5]].reshape(n, p)
            mean_off = v[self.slices[6]]
        return RegressionParams(a, b, v[self.slices[3]].reshape(k, p),
                                v[self.slices[4]], mean_coef, mean_off)

    def gradient_vector(self, blocks) -> np.ndarray:
        """Map objective gradient blocks to the encoded (minimization) space."""
        ga, gb, gc, gd, ge, gf = blocks
        out = np.empty(self.dim)
        out[self.slices[0]] = -(ga + gb[:, None]).ravel()
        out[self.slices[1]] = -(-ga + gb[:, None]).ravel()
        out[self.slices[2]] = -gb
        out[self.slices[3]] = -gc.ravel()
        out[self.slices[4]] = -gd
        if self.with_mean:
            out[self.slices[5]] = -ge.ravel()
            out[self.slices[6]] = -gf
        return out


class RawEncoding:
    """Direct flat encoding of the parameter blocks, no bounds."""

    def __init__(self, n: int, p: int, with_mean: bool):
        self.n = n
        self.p = p
        self.k = packed_size(n)
        self.with_mean = with_mean
        sizes = [n * p, n, self.k * p, self.k]
        if with_mean:
            sizes += [n * p, n]
        bounds = np.cumsum([0] + sizes)
        self.slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        self.dim = int(bounds[-1])

    def identity_start(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[self.slices[1]] = 1.0
        return v

    def decode(self, v: np.ndarray) -> RegressionParams:
        n, p, k = self.n, self.p, self.k
        mean_coef = mean_off = None
        if self.with_mean:
            mean_coef = v[self.slices[4]].reshape(n, p)
            mean_off = v[self.slices[5]]
        return RegressionParams(v[self.slices[0]].reshape(n, p), v[self.slices[1]],
                                v[self.slices[2]].reshape(k, p), v[self.slices[3]],
                                mean_coef, mean_off)

    def gradient_vector(self, blocks) -> np.ndarray:
        ga, gb, gc, gd, ge, gf = blocks
        parts = [-ga.ravel(), -gb, -gc.ravel(), -gd]
        if self.with_mean:
            parts += [-ge.ravel(), -gf]
        return np.concatenate(parts)


def _make_problem(encoding, data: Dataset, config: FitConfig,
                  lower: np.ndarray, upper: np.ndarray) -> BoxProblem:
    zero_grad = np.zeros(encoding.dim)

    def evaluate(v):
        params = encoding.decode(v)
        ok, value, blocks = _objective_blocks(params, data, config, want_grad=True)
        if not ok:
            return np.inf, zero_grad
        return -value, encoding.gradient_vector(blocks)

    return BoxProblem(lower, upper, evaluate)


def _require_usable(result: MinimizeResult, grad_tolerance: float, context: str) -> None:
    if result.status is SolveStatus.CONVERGED:
        return
    if result.projected_grad_norm <= 10.0 * grad_tolerance:
        logger.info("%s: accepting %s iterate, projected gradient %.3e",
                    context, result.status.value, result.projected_grad_norm)
        return
    detail = (f"{context}: stopped with status {result.status.value} after "
              f"{result.iterations} iterations, projected gradient "
              f"{result.projected_grad_norm:.3e} (tolerance {grad_tolerance:.1e})")
    if result.status is SolveStatus.LINE_SEARCH_FAILURE:
        raise LineSearchFailure(
            detail + "; no acceptable step existed, which usually means the "
                     "objective and gradient are inconsistent")
    raise SolverFailure(detail)


def _minimize_encoded(encoding, data, config, start, lower, upper):
    problem = _make_problem(encoding, data, config, lower, upper)
    return minimize(problem, start, memory=config.lbfgs_memory,
                    max_iters=config.max_iters, grad_tol=config.grad_tolerance)


def fit_regression(data: Dataset, config: FitConfig | None = None, *,
                   with_mean: bool = False) -> WhitenerStage:
    """Fit the affine regression whitener by concave maximum likelihood.

    Starts from the identity whitener, so the fitted training objective is
    never worse than the identity's. The returned stage always satisfies
    the feasibility condition of ``check_feasible`` at config.epsilon.

    With ``config.fast_unconstrained`` the box constraints are dropped
    first; if the unconstrained optimum is infeasible the split
    reformulation is solved as usual, warm-started from its projection.

    Raises
    ------
    SolverFailure
        When the optimizer stops early and the iterate also fails a ten
        times looser gradient tolerance. Degenerate data (for example a
        singular empirical covariance) can make the unpenalized problem
        unbounded; a positive lambda1/lambda2 or trace_ridge restores
        boundedness.
    """
    config = config if config is not None else FitConfig()
    n, p = data.n_outcomes, data.n_features
    warm = None

    if config.fast_unconstrained:
        raw = RawEncoding(n, p, with_mean)
        raw_result = _minimize_encoded(
            raw, data, config, raw.identity_start(),
            np.full(raw.dim, -np.inf), np.full(raw.dim, np.inf))
        candidate = raw.decode(raw_result.x)
        report = check_feasible(candidate, config.epsilon)
        if raw_result.status is SolveStatus.CONVERGED and report.feasible:
            logger.info("fit_regression: unconstrained optimum feasible "
                        "(margin %.3e), split solve skipped", report.min_margin)
            _log_activity(candidate, config.epsilon)
            return WhitenerStage("regression", candidate)
        logger.info("fit_regression: unconstrained path unusable "
                    "(status %s, margin %.3e), re-solving with the split "
                    "formulation", raw_result.status.value, report.min_margin)
        warm = candidate

    enc = SplitEncoding(n, p, config.epsilon, with_mean)
    start = enc.encode(warm) if warm is not None else enc.identity_start()
    result = _minimize_encoded(enc, data, config, start,
                               enc.lower_bounds(), enc.upper_bounds())
    _require_usable(result, config.grad_tolerance, "fit_regression")
    if result.value_history and result.value > result.value_history[0] + 1e-9:
        raise SolverFailure(
            "fit_regression: objective regressed below its starting value, "
            "which indicates an internal inconsistency")
    params = enc.decode(result.x)
    if not check_feasible(params, config.epsilon).feasible:
        raise SolverFailure("fit_regression: solution failed the feasibility check")
    _log_activity(params, config.epsilon)
    return WhitenerStage("regression", params)


def fit_joint(data: Dataset, config: FitConfig | None = None) -> WhitenerStage:
    """Fit the regression whitener jointly with an affine mean model."""
    return fit_regression(data, config, with_mean=True)


def _log_activity(params: RegressionParams, epsilon: float) -> None:
    margins = (params.diag_offset - epsilon
               - np.sum(np.abs(params.diag_coef), axis=1))
    tol = 1e-9 * np.maximum(1.0, np.abs(params.diag_offset))
    active = int(np.sum(margins <= tol))
    logger.info("diagonal floor constraint active on %d of %d rows",
                active, params.n)


def fit_diagonal(data: Dataset, ridge: float = 0.0, *, max_iters: int = 500,
                 grad_tolerance: float = 1e-7,
                 lbfgs_memory: int = 10) -> WhitenerStage:
    """Fit the diagonal log-variance whitener.

    The model predicts variance exp(coef @ x + offset) per outcome, so the
    stage factor is diag(exp(-(coef @ x + offset) / 2)). The problem is
    concave and separates across outcome rows; each row is solved
    independently. ``ridge`` penalizes the squared norm of each row of the
    coefficient matrix (and pushes the p = 0 solution toward the closed
    form offset[j] = log(mean y_j^2)).
    """
    if ridge < 0.0:
        raise ValueError("ridge must be non-negative")
    x = np.ascontiguousarray(data.features)
    n, p = data.n_outcomes, data.n_features
    n_samples = data.n_samples
    coef = np.zeros((n, p))
    offset = np.zeros(n)

    for j in range(n):
        ysq = data.outcomes[:, j] ** 2
        mean_sq = float(np.mean(ysq))
        if mean_sq <= 0.0:
            raise SingularCovariance(f"outcome column {j} is identically zero")

        def evaluate(v, _ysq=ysq):
            a = v[:p]
            b = v[p]
            with np.errstate(over="ignore", invalid="ignore"):
                u = x @ a + b
                t = np.exp(-u) * _ysq
                value = (float(np.sum(-0.5 * u - 0.5 * t)) / n_samples
                         - 0.5 * LOG_2PI - ridge * float(a @ a))
                if not np.isfinite(value):
                    return np.inf, np.zeros(p + 1)
                du = (0.5 * t - 0.5) / n_samples
                grad = np.empty(p + 1)
                grad[:p] = x.T @ du - 2.0 * ridge * a
                grad[p] = float(np.sum(du))
            return -value, -grad

        start = np.zeros(p + 1)
        start[p] = np.log(mean_sq)
        problem = BoxProblem(np.full(p + 1, -np.inf), np.full(p + 1, np.inf), evaluate)
        result = minimize(problem, start, memory=lbfgs_memory,
                          max_iters=max_iters, grad_tol=grad_tolerance)
        _require_usable(result, grad_tolerance, f"fit_diagonal row {j}")
        coef[j] = result.x[:p]
        offset[j] = result.x[p]

    return WhitenerStage("diagonal", DiagonalParams(coef, offset))
