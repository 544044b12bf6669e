"""Whitening stages, pipelines, and dataset-level whitening.

A stage maps a feature vector (and, for rolling kinds, a trailing window
of outcomes) to a whitening factor. Stages compose by iteration: each
stage whitens the output of the previous one, factors multiply, and
log-determinants add, so a pipeline is itself a whitener.

Stage kinds
-----------
constant
    A fixed factor, the Cholesky factor of the inverse empirical second
    moment of the training outcomes.
diagonal
    Per-outcome log-variance regression: predicted variance
    exp(coef @ x + offset), factor diag(exp(-(coef @ x + offset)/2)).
sma
    Rolling second moment over the previous ``memory`` rows.
ewma
    Exponentially weighted second moment over all previous rows with
    forgetting factor 2**(-1/half_life).
permutation
    Reorders outcome entries; its factor is the identity and it
    contributes nothing to the log-likelihood.
regression
    The affine whitener of :mod:`covcast.objective`, optionally with a
    whitened-space mean shift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import (
    DimensionMismatch,
    InsufficientHistory,
    InvalidMemory,
    InvalidPermutation,
    NonPositiveDiagonal,
    NotPositiveDefinite,
    SchemaError,
    SingularCovariance,
    VersionMismatch,
)
from .kernels import LOG_2PI
from .linalg import (
    LowerTriangular,
    SymmetricPD,
    cholesky,
    covariance_from_whitener,
    factor_of_inverse,
    packed_indices,
)
from .objective import RegressionParams

PIPELINE_VERSION = 1

STAGE_KINDS = ("constant", "diagonal", "sma", "ewma", "permutation", "regression")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ConstantParams:
    """A fixed whitening factor."""

    factor: LowerTriangular


@dataclass(frozen=True)
class DiagonalParams:
    """Log-variance regression coefficients, shapes (n, p) and (n,)."""

    coef: np.ndarray
    offset: np.ndarray

    def __post_init__(self) -> None:
        coef = np.asarray(self.coef, dtype=np.float64)
        offset = np.atleast_1d(np.asarray(self.offset, dtype=np.float64))
        if coef.ndim != 2 or offset.ndim != 1 or coef.shape[0] != offset.size:
            raise DimensionMismatch(
                f"coef shape {coef.shape} does not match offset shape {offset.shape}"
            )
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(offset))):
            raise ValueError("diagonal parameters must be finite")
        object.__setattr__(self, "coef", _frozen(coef))
        object.__setattr__(self, "offset", _frozen(offset))


@dataclass(frozen=True)
class SmaParams:
    """Rolling-window second moment settings."""

    memory: int
    diagonal_loading: float = 0.0

    def __post_init__(self) -> None:
        if int(self.memory) != self.memory or self.memory < 1:
            raise InvalidMemory(f"memory must be a positive integer, got {self.memory}")
        if self.diagonal_loading < 0.0:
            raise ValueError("diagonal_loading must be non-negative")
        object.__setattr__(self, "memory", int(self.memory))


@dataclass(frozen=True)
class EwmaParams:
    """Exponentially weighted second moment settings."""

    half_life: float
    diagonal_loading: float = 0.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.half_life) and self.half_life > 0.0):
            raise ValueError(f"half_life must be positive, got {self.half_life}")
        if self.diagonal_loading < 0.0:
            raise ValueError("diagonal_loading must be non-negative")

    @property
    def forgetting_factor(self) -> float:
        return float(2.0 ** (-1.0 / self.half_life))


@dataclass(frozen=True)
class PermutationParams:
    """Outcome reorder: whitened[j] = y[order[j]], zero-based indices."""

    order: np.ndarray

    def __post_init__(self) -> None:
        order = np.asarray(self.order, dtype=np.int64).reshape(-1)
        if order.size == 0 or not np.array_equal(np.sort(order), np.arange(order.size)):
            raise InvalidPermutation(
                f"order {order.tolist()} is not a permutation of 0..{max(order.size - 1, 0)}"
            )
        object.__setattr__(self, "order", _frozen(order, dtype=np.int64))


_PARAM_TYPES = {
    "constant": ConstantParams,
    "diagonal": DiagonalParams,
    "sma": SmaParams,
    "ewma": EwmaParams,
    "permutation": PermutationParams,
    "regression": RegressionParams,
}


@dataclass(frozen=True)
class WhitenerStage:
    """One stage of a whitening pipeline: a kind tag plus its parameters."""

    kind: str
    params: object

    def __post_init__(self) -> None:
        if self.kind not in STAGE_KINDS:
            raise SchemaError(f"unknown stage kind {self.kind!r}")
        expected = _PARAM_TYPES[self.kind]
        if not isinstance(self.params, expected):
            raise DimensionMismatch(
                f"stage kind {self.kind!r} expects {expected.__name__} parameters"
            )


def _stage_n(stage: WhitenerStage) -> int | None:
    """Outcome dimension pinned by the stage parameters, if any."""
    if stage.kind == "constant":
        return stage.params.factor.n
    if stage.kind == "diagonal":
        return stage.params.offset.size
    if stage.kind == "permutation":
        return stage.params.order.size
    if stage.kind == "regression":
        return stage.params.n
    return None


def _stage_p(stage: WhitenerStage) -> int | None:
    """Feature dimension pinned by the stage parameters, if any."""
    if stage.kind == "diagonal":
        return stage.params.coef.shape[1]
    if stage.kind == "regression":
        return stage.params.p
    return None


@dataclass(frozen=True)
class Pipeline:
    """An ordered composition of whitening stages for fixed (n, p)."""

    stages: tuple[WhitenerStage, ...]
    n: int
    p: int

    def __post_init__(self) -> None:
        stages = tuple(self.stages)
        if self.n < 1 or self.p < 0:
            raise DimensionMismatch(f"invalid dimensions n={self.n}, p={self.p}")
        for i, stage in enumerate(stages):
            sn = _stage_n(stage)
            if sn is not None and sn != self.n:
                raise DimensionMismatch(
                    f"stage {i} ({stage.kind}) has n={sn}, pipeline has n={self.n}"
                )
            sp = _stage_p(stage)
            if sp is not None and sp != self.p:
                raise DimensionMismatch(
                    f"stage {i} ({stage.kind}) has p={sp}, pipeline has p={self.p}"
                )
        object.__setattr__(self, "stages", stages)


# ---------------------------------------------------------------------------
# Rolling second moments


def _sma_moments(outcomes: np.ndarray, memory: int, loading: float) -> np.ndarray:
    """Second moments for rows memory..N-1, each over the previous rows.

    Maintained by the sliding recursion S <- S + y_i y_i^T - y_{i-M} y_{i-M}^T.
    """
    n_rows, n = outcomes.shape
    out = np.empty((n_rows - memory, n, n))
    s = np.zeros((n, n))
    for i in range(memory):
        s += np.outer(outcomes[i], outcomes[i])
    shift = loading * np.eye(n)
    for i in range(memory, n_rows):
        out[i - memory] = s / memory + shift
        s += np.outer(outcomes[i], outcomes[i])
        s -= np.outer(outcomes[i - memory], outcomes[i - memory])
    return out


def _ewma_moments(outcomes: np.ndarray, half_life: float, loading: float) -> np.ndarray:
    """Weighted second moments for rows n..N-1 over all previous rows.

    Row i weights y_j (j < i) proportionally to gamma**(i - j) and
    normalizes the weights to one; maintained by S <- gamma (S + y y^T),
    W <- gamma (W + 1).
    """
    n_rows, n = outcomes.shape
    gamma = 2.0 ** (-1.0 / half_life)
    out = np.empty((n_rows - n, n, n))
    s = np.zeros((n, n))
    w = 0.0
    shift = loading * np.eye(n)
    for i in range(n_rows):
        if i >= n:
            out[i - n] = s / w + shift
        s = gamma * (s + np.outer(outcomes[i], outcomes[i]))
        w = gamma * (w + 1.0)
    return out


def _moment_factor(moment: np.ndarray, row: int) -> LowerTriangular:
    try:
        return factor_of_inverse(SymmetricPD(moment))
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(
            f"rolling second moment is singular at data row {row}; "
            "consider diagonal_loading"
        ) from exc


# ---------------------------------------------------------------------------
# Single-point evaluation


def evaluate(stage: WhitenerStage, x: np.ndarray | None = None,
             history: np.ndarray | None = None) -> LowerTriangular:
    """Whitening factor of one stage at one point.

    ``x`` is the feature vector for feature-parametrized kinds; ``history``
    is the trailing outcome window (oldest first) for rolling kinds, in
    the stage's input frame. A permutation stage returns the identity
    factor; the reorder itself is applied by the whitening routines.
    """
    if stage.kind == "constant":
        return stage.params.factor
    if stage.kind == "diagonal":
        params = stage.params
        vec = np.zeros(params.coef.shape[1]) if x is None else np.asarray(x, dtype=np.float64)
        if vec.shape != (params.coef.shape[1],):
            raise DimensionMismatch(
                f"feature has shape {vec.shape}, expected ({params.coef.shape[1]},)"
            )
        diag = np.exp(-(params.coef @ vec + params.offset) / 2.0)
        return LowerTriangular(diag, np.zeros(diag.size * (diag.size - 1) // 2))
    if stage.kind == "regression":
        if x is None:
            x = np.zeros(stage.params.p)
        return stage.params.factor_at(x)
    if stage.kind == "permutation":
        return LowerTriangular.identity(stage.params.order.size)
    # Rolling kinds need history.
    if history is None:
        raise InsufficientHistory(f"{stage.kind} stage needs a trailing outcome window")
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise DimensionMismatch("history must be a 2-d window of outcomes")
    rows, n = history.shape
    if stage.kind == "sma":
        memory = stage.params.memory
        if memory < n:
            raise InvalidMemory(f"memory {memory} is below the outcome dimension {n}")
        if rows < memory:
            raise InsufficientHistory(f"need {memory} prior outcomes, got {rows}")
        window = history[-memory:]
        moment = window.T @ window / memory
        moment += stage.params.diagonal_loading * np.eye(n)
        return _moment_factor(moment, rows)
    # ewma
    if rows < n:
        raise InsufficientHistory(f"need at least {n} prior outcomes, got {rows}")
    gamma = stage.params.forgetting_factor
    weights = gamma ** np.arange(rows, 0, -1, dtype=np.float64)
    weights /= np.sum(weights)
    moment = (history * weights[:, None]).T @ history
    moment = (moment + moment.T) / 2.0
    moment += stage.params.diagonal_loading * np.eye(n)
    return _moment_factor(moment, rows)


# ---------------------------------------------------------------------------
# Dataset-level whitening


@dataclass(frozen=True)
class WhitenResult:
    """Output of :func:`whiten_dataset`.

    ``dataset`` holds the surviving rows with whitened outcomes.
    ``factors[i]`` is the composed factor of surviving row i and
    ``covariances[i]`` the covariance it encodes. ``logdets`` carries the
    per-row sum of stage log-determinants. For pipelines with a mean
    stage, ``mean_shifts`` is the accumulated whitened-space mean and
    ``means`` the implied outcome-space mean prediction per row; both are
    None for zero-mean pipelines. ``kept`` lists the original row
    positions of the surviving rows.
    """

    dataset: Dataset
    factors: list[LowerTriangular]
    covariances: list[SymmetricPD]
    logdets: np.ndarray
    mean_shifts: np.ndarray | None
    means: np.ndarray | None
    kept: np.ndarray

    @property
    def dropped_rows(self) -> int:
        return int(self.kept[0]) if self.kept.size else 0

    def sample_logliks(self) -> np.ndarray:
        """Per-row log-likelihood of the original outcomes."""
        z = self.dataset.outcomes
        n = z.shape[1]
        return -0.5 * n * LOG_2PI + self.logdets - 0.5 * np.sum(z * z, axis=1)


def _batch_stage_factors(stage: WhitenerStage, features: np.ndarray,
                         n: int, kept: np.ndarray):
    """Dense factors (plus mean shifts and log-dets) of a feature stage."""
    n_rows = features.shape[0]
    idx = np.arange(n)
    shifts = None
    if stage.kind == "constant":
        dense = stage.params.factor.dense()
        factors = np.repeat(dense[None, :, :], n_rows, axis=0)
        logdets = np.full(n_rows, stage.params.factor.logdet())
    elif stage.kind == "diagonal":
        u = features @ stage.params.coef.T + stage.params.offset
        diag = np.exp(-u / 2.0)
        factors = np.zeros((n_rows, n, n))
        factors[:, idx, idx] = diag
        logdets = np.sum(np.log(diag), axis=1)
    elif stage.kind == "regression":
        params = stage.params
        diag = features @ params.diag_coef.T + params.diag_offset
        if diag.size and np.min(diag) <= 0.0:
            where = int(np.argmin(np.min(diag, axis=1)))
            raise NonPositiveDiagonal(
                f"factor diagonal is non-positive at data row {int(kept[where])}"
            )
        lower = features @ params.lower_coef.T + params.lower_offset
        rows, cols = packed_indices(n)
        factors = np.zeros((n_rows, n, n))
        factors[:, idx, idx] = diag
        if rows.size:
            factors[:, rows, cols] = lower
        logdets = np.sum(np.log(diag), axis=1)
        if params.with_mean:
            shifts = features @ params.mean_coef.T + params.mean_offset
    else:  # permutation
        order = stage.params.order
        factors = np.repeat(np.eye(n)[order].T[None, :, :], n_rows, axis=0)
        logdets = np.zeros(n_rows)
    return factors, shifts, logdets


def whiten_dataset(pipeline: Pipeline, data: Dataset) -> WhitenResult:
    """Whiten every row of a dataset through the pipeline.

    Rolling stages consume the outcome sequence as whitened by the stages
    before them; their warm-up rows are dropped from the output (the
    original positions of the surviving rows are reported in ``kept``).
    """
    if data.n_outcomes != pipeline.n:
        raise DimensionMismatch(
            f"pipeline has n={pipeline.n} outcomes, data has n={data.n_outcomes}"
        )
    if data.n_features != pipeline.p:
        raise DimensionMismatch(
            f"pipeline has p={pipeline.p} features, data has p={data.n_features}"
        )
    n = pipeline.n
    features = data.features
    timestamps = data.timestamps
    z = data.outcomes.copy()
    kept = np.arange(data.n_samples)
    prod = np.repeat(np.eye(n)[None, :, :], data.n_samples, axis=0)
    logdets = np.zeros(data.n_samples)
    has_mean = any(
        s.kind == "regression" and s.params.with_mean for s in pipeline.stages
    )
    shifts_acc = np.zeros((data.n_samples, n)) if has_mean else None
    has_perm = any(s.kind == "permutation" for s in pipeline.stages)

    for stage in pipeline.stages:
        if stage.kind in ("sma", "ewma"):
            if timestamps is None:
                raise InsufficientHistory(
                    f"{stage.kind} stage requires timestamped data to define row order"
                )
            if stage.kind == "sma":
                memory = stage.params.memory
                if memory < n:
                    raise InvalidMemory(
                        f"memory {memory} is below the outcome dimension {n}"
                    )
                warmup = memory
                if z.shape[0] <= warmup:
                    raise InsufficientHistory(
                        f"sma stage needs more than {warmup} rows, got {z.shape[0]}"
                    )
                moments = _sma_moments(z, memory, stage.params.diagonal_loading)
            else:
                warmup = n
                if z.shape[0] <= warmup:
                    raise InsufficientHistory(
                        f"ewma stage needs more than {warmup} rows, got {z.shape[0]}"
                    )
                moments = _ewma_moments(z, stage.params.half_life,
                                        stage.params.diagonal_loading)
            # Drop warm-up rows, then whiten the survivors.
            features = features[warmup:]
            timestamps = None if timestamps is None else timestamps[warmup:]
            z = z[warmup:]
            prod = prod[warmup:]
            logdets = logdets[warmup:]
            kept = kept[warmup:]
            if shifts_acc is not None:
                shifts_acc = shifts_acc[warmup:]
            stage_factors = np.empty_like(moments)
            stage_logdets = np.empty(z.shape[0])
            for i in range(z.shape[0]):
                factor = _moment_factor(moments[i], int(kept[i]))
                stage_factors[i] = factor.dense()
                stage_logdets[i] = factor.logdet()
            shifts = None
        else:
            stage_factors, shifts, stage_logdets = _batch_stage_factors(
                stage, features, n, kept
            )
        if shifts_acc is not None:
            shifts_acc = np.einsum("rba,rb->ra", stage_factors, shifts_acc)
            if shifts is not None:
                shifts_acc += shifts
        z = np.einsum("rba,rb->ra", stage_factors, z)
        if shifts is not None:
            z = z - shifts
        prod = np.matmul(prod, stage_factors)
        logdets = logdets + stage_logdets

    factors = []
    for i in range(z.shape[0]):
        if has_perm:
            m = prod[i]
            factors.append(cholesky(SymmetricPD((m @ m.T + (m @ m.T).T) / 2.0)))
        else:
            factors.append(LowerTriangular.from_dense(prod[i]))
    covariances = [covariance_from_whitener(f) for f in factors]
    means = None
    if shifts_acc is not None and z.shape[0]:
        # The model says prod^T y - nu ~ N(0, I), so the mean prediction
        # solves prod^T mu = nu with the true product, not its Cholesky
        # re-realization.
        means = np.linalg.solve(prod.transpose(0, 2, 1),
                                shifts_acc[:, :, None])[:, :, 0]
    elif shifts_acc is not None:
        means = np.zeros((0, n))
    out = Dataset(features, z, timestamps)
    return WhitenResult(out, factors, covariances, logdets, shifts_acc, means, kept)


def score(pipeline: Pipeline, data: Dataset) -> float:
    """Mean per-sample log-likelihood of the data under the pipeline (nats)."""
    result = whiten_dataset(pipeline, data)
    return float(np.mean(result.sample_logliks()))


# ---------------------------------------------------------------------------
# Stage fitting (closed forms; the solver-backed fits live in covcast.solver)


def fit_constant(data: Dataset, diagonal_loading: float = 0.0) -> WhitenerStage:
    """Constant whitener from the empirical second moment of the outcomes."""
    y = data.outcomes
    n = data.n_outcomes
    if data.n_samples < n:
        raise SingularCovariance(
            f"need at least {n} rows to estimate an {n}-dimensional second "
            f"moment, got {data.n_samples}"
        )
    moment = y.T @ y / data.n_samples
    moment = (moment + moment.T) / 2.0 + diagonal_loading * np.eye(n)
    try:
        factor = factor_of_inverse(SymmetricPD(moment))
    except NotPositiveDefinite as exc:
        raise SingularCovariance(
            "empirical second moment is singular; add rows or diagonal loading"
        ) from exc
    return WhitenerStage("constant", ConstantParams(factor))


def fit_sma(data: Dataset, memory: int, diagonal_loading: float = 0.0) -> WhitenerStage:
    """Rolling-window whitener; requires timestamps and memory >= n."""
    if data.timestamps is None:
        raise InsufficientHistory("sma stage requires timestamped data")
    params = SmaParams(memory, diagonal_loading)
    if params.memory < data.n_outcomes:
        raise InvalidMemory(
            f"memory {params.memory} is below the outcome dimension {data.n_outcomes}"
        )
    return WhitenerStage("sma", params)


def fit_ewma(data: Dataset, half_life: float, diagonal_loading: float = 0.0) -> WhitenerStage:
    """Exponentially weighted whitener; requires timestamps."""
    if data.timestamps is None:
        raise InsufficientHistory("ewma stage requires timestamped data")
    return WhitenerStage("ewma", EwmaParams(half_life, diagonal_loading))


def fit_permutation(order: Sequence[int]) -> WhitenerStage:
    """Reorder stage; ``order`` must be a zero-based permutation."""
    return WhitenerStage("permutation", PermutationParams(np.asarray(order)))


# ---------------------------------------------------------------------------
# Combination and replication


def _pipeline_matrix(pipeline: Pipeline, x: np.ndarray | None) -> np.ndarray:
    """Composed factor product at a single feature point (feature-only stages)."""
    out = np.eye(pipeline.n)
    for i, stage in enumerate(pipeline.stages):
        if stage.kind in ("sma", "ewma"):
            raise InsufficientHistory(
                f"stage {i} ({stage.kind}) needs trailing outcomes; "
                "use whiten_dataset for rolling pipelines"
            )
        if stage.kind == "permutation":
            out = out @ np.eye(pipeline.n)[stage.params.order].T
        else:
            out = out @ evaluate(stage, x).dense()
    return out


def evaluate_pipeline(pipeline: Pipeline, x: np.ndarray | None = None) -> LowerTriangular:
    """Composed whitening factor of a feature-only pipeline at x."""
    m = _pipeline_matrix(pipeline, x)
    if any(s.kind == "permutation" for s in pipeline.stages):
        prec = m @ m.T
        return cholesky(SymmetricPD((prec + prec.T) / 2.0))
    return LowerTriangular.from_dense(m)


def predict_point(pipeline: Pipeline, x: np.ndarray | None = None):
    """Predicted covariance (and mean, when modeled) at one feature point.

    Returns (covariance, mean); mean is None for zero-mean pipelines.
    Feature-only pipelines only; rolling stages raise InsufficientHistory.
    """
    m = np.eye(pipeline.n)
    nu = np.zeros(pipeline.n)
    has_mean = any(
        s.kind == "regression" and s.params.with_mean for s in pipeline.stages
    )
    for i, stage in enumerate(pipeline.stages):
        if stage.kind in ("sma", "ewma"):
            raise InsufficientHistory(
                f"stage {i} ({stage.kind}) needs trailing outcomes; "
                "use whiten_dataset for rolling pipelines"
            )
        if stage.kind == "permutation":
            f = np.eye(pipeline.n)[stage.params.order].T
        else:
            f = evaluate(stage, x).dense()
        nu = f.T @ nu
        if stage.kind == "regression" and stage.params.with_mean:
            nu += stage.params.mean_shift_at(
                np.zeros(pipeline.p) if x is None else np.asarray(x, dtype=np.float64)
            )
        m = m @ f
    precision = m @ m.T
    covariance = covariance_from_whitener(
        cholesky(SymmetricPD((precision + precision.T) / 2.0))
    )
    mean = np.linalg.solve(m.T, nu) if has_mean else None
    return covariance, mean


def fuse(pipelines: Sequence[Pipeline], x: np.ndarray | None = None) -> SymmetricPD:
    """Pool predictors by averaging precisions.

    Returns the covariance whose inverse is the mean of the pipelines'
    predicted inverse covariances at x. All pipelines must share (n, p).
    """
    if not pipelines:
        raise ValueError("fuse needs at least one pipeline")
    n, p = pipelines[0].n, pipelines[0].p
    precision = np.zeros((n, n))
    for i, pipeline in enumerate(pipelines):
        if pipeline.n != n or pipeline.p != p:
            raise DimensionMismatch(
                f"pipeline {i} has (n={pipeline.n}, p={pipeline.p}), "
                f"expected (n={n}, p={p})"
            )
        m = _pipeline_matrix(pipeline, x)
        precision += m @ m.T
    precision /= len(pipelines)
    precision = (precision + precision.T) / 2.0
    return covariance_from_whitener(cholesky(SymmetricPD(precision)))


def replicate_horizon(data: Dataset, horizon: int) -> Dataset:
    """Pair each feature row with the next ``horizon`` outcomes.

    Row i expands to (x_i, y_i), ..., (x_i, y_{i+horizon-1}); the trailing
    rows without a full look-ahead window are dropped, leaving
    (N - horizon + 1) * horizon rows. The replicated dataset carries no
    timestamps because replicated rows share them.
    """
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon}")
    horizon = int(horizon)
    if horizon == 1:
        return data
    if data.timestamps is None:
        raise InsufficientHistory("replicate_horizon requires timestamped data")
    n_base = data.n_samples - horizon + 1
    if n_base < 1:
        raise DimensionMismatch(
            f"horizon {horizon} exceeds the {data.n_samples} available rows"
        )
    base = np.repeat(np.arange(n_base), horizon)
    ahead = (np.arange(n_base)[:, None] + np.arange(horizon)[None, :]).ravel()
    return Dataset(data.features[base], data.outcomes[ahead], None)


# ---------------------------------------------------------------------------
# Serialization


def _array_field(doc: dict, key: str, shape: tuple[int, ...]) -> np.ndarray:
    if key not in doc:
        raise SchemaError(f"stage document is missing field {key!r}")
    try:
        return np.asarray(doc[key], dtype=np.float64).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"stage field {key!r} is malformed: {exc}") from exc


def _stage_to_dict(stage: WhitenerStage) -> dict:
    params = stage.params
    if stage.kind == "constant":
        return {"kind": "constant", "diag": params.factor.diag.tolist(),
                "offdiag": params.factor.offdiag.tolist()}
    if stage.kind == "diagonal":
        return {"kind": "diagonal", "coef": params.coef.tolist(),
                "offset": params.offset.tolist()}
    if stage.kind == "sma":
        return {"kind": "sma", "memory": params.memory,
                "diagonal_loading": params.diagonal_loading}
    if stage.kind == "ewma":
        return {"kind": "ewma", "half_life": params.half_life,
                "diagonal_loading": params.diagonal_loading}
    if stage.kind == "permutation":
        return {"kind": "permutation", "order": params.order.tolist()}
    out = {"kind": "regression",
           "diag_coef": params.diag_coef.tolist(),
           "diag_offset": params.diag_offset.tolist(),
           "lower_coef": params.lower_coef.tolist(),
           "lower_offset": params.lower_offset.tolist()}
    if params.with_mean:
        out["mean_coef"] = params.mean_coef.tolist()
        out["mean_offset"] = params.mean_offset.tolist()
    return out


def _stage_from_dict(doc: dict, n: int, p: int) -> WhitenerStage:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SchemaError("stage document must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind not in STAGE_KINDS:
        raise SchemaError(f"unknown stage kind {kind!r}")
    k = n * (n - 1) // 2
    if kind == "constant":
        return WhitenerStage("constant", ConstantParams(LowerTriangular(
            _array_field(doc, "diag", (n,)), _array_field(doc, "offdiag", (k,)))))
    if kind == "diagonal":
        return WhitenerStage("diagonal", DiagonalParams(
            _array_field(doc, "coef", (n, p)), _array_field(doc, "offset", (n,))))
    if kind == "sma":
        return WhitenerStage("sma", SmaParams(
            int(doc.get("memory", 0)), float(doc.get("diagonal_loading", 0.0))))
    if kind == "ewma":
        return WhitenerStage("ewma", EwmaParams(
            float(doc.get("half_life", 0.0)), float(doc.get("diagonal_loading", 0.0))))
    if kind == "permutation":
        if "order" not in doc:
            raise SchemaError("permutation stage is missing field 'order'")
        return WhitenerStage("permutation", PermutationParams(np.asarray(doc["order"])))
    mean_coef = mean_offset = None
    if "mean_coef" in doc or "mean_offset" in doc:
        mean_coef = _array_field(doc, "mean_coef", (n, p))
        mean_offset = _array_field(doc, "mean_offset", (n,))
    return WhitenerStage("regression", RegressionParams(
        _array_field(doc, "diag_coef", (n, p)),
        _array_field(doc, "diag_offset", (n,)),
        _array_field(doc, "lower_coef", (k, p)),
        _array_field(doc, "lower_offset", (k,)),
        mean_coef, mean_offset))


def pipeline_to_dict(pipeline: Pipeline) -> dict:
    """JSON-ready document: {version, n, p, stages: [...]}."""
    return {"version": PIPELINE_VERSION, "n": pipeline.n, "p": pipeline.p,
            "stages": [_stage_to_dict(s) for s in pipeline.stages]}


def pipeline_from_dict(doc: dict) -> Pipeline:
    """Inverse of :func:`pipeline_to_dict`; raises SchemaError/VersionMismatch."""
    if not isinstance(doc, dict):
        raise SchemaError("pipeline document must be an object")
    version = doc.get("version")
    if version != PIPELINE_VERSION:
        raise VersionMismatch(
            f"pipeline document has version {version!r}, expected {PIPELINE_VERSION}"
        )
    try:
        n = int(doc["n"])
        p = int(doc["p"])
        stages = doc["stages"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"pipeline document is malformed: {exc}") from exc
    if not isinstance(stages, list):
        raise SchemaError("pipeline field 'stages' must be a list")
    return Pipeline(tuple(_stage_from_dict(s, n, p) for s in stages), n, p)
