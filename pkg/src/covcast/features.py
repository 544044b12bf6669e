"""Feature transforms mapping raw columns into the unit box [-1, 1].

Every fitted whitener assumes its features live in [-1, 1]; the
feasibility guarantee of the regression whitener holds over exactly that
box. A transform is fitted on training rows and then applied to any
rows, clamping values outside the training range.

Kinds
-----
clip
    Stateless hard clip to [-1, 1] for columns already on that scale.
minmax
    Affine map sending the training minimum and maximum to -1 and 1,
    clipped outside.
quantile
    Empirical CDF by mid-ranks: the training values map to
    2 * (rank - 0.5) / N - 1 with ties averaged, new values interpolate,
    and values outside the training range saturate at -1 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateColumn, SchemaError

TRANSFORM_KINDS = ("clip", "minmax", "quantile")


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Transform:
    """A fitted column transform. Build with :func:`fit_transform`."""

    kind: str
    low: float = 0.0
    high: float = 0.0
    values: np.ndarray | None = None
    positions: np.ndarray | None = None

    def apply(self, column: np.ndarray) -> np.ndarray:
        v = np.asarray(column, dtype=np.float64)
        if self.kind == "clip":
            return np.clip(v, -1.0, 1.0)
        if self.kind == "minmax":
            scaled = 2.0 * (v - self.low) / (self.high - self.low) - 1.0
            return np.clip(scaled, -1.0, 1.0)
        u = np.interp(v, self.values, self.positions, left=0.0, right=1.0)
        return 2.0 * u - 1.0


def fit_transform(kind: str, column: np.ndarray) -> Transform:
    """Fit a transform of the given kind on a training column."""
    if kind not in TRANSFORM_KINDS:
        raise SchemaError(f"unknown transform kind {kind!r}")
    v = np.asarray(column, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("transform fitting needs a non-empty 1-d column")
    if not np.all(np.isfinite(v)):
        raise ValueError("transform fitting needs finite values")
    if kind == "clip":
        return Transform("clip")
    if kind == "minmax":
        low = float(np.min(v))
        high = float(np.max(v))
        if low == high:
            raise DegenerateColumn(
                f"column is constant at {low}; min-max scaling is undefined"
            )
        return Transform("minmax", low=low, high=high)
    # quantile: mid-ranks of the sorted sample, tie blocks averaged
    order = np.sort(v)
    ranks = (np.arange(v.size) + 0.5) / v.size
    values, start, counts = np.unique(order, return_index=True, return_counts=True)
    # mean mid-rank of each tie block
    sums = np.add.reduceat(ranks, start)
    positions = sums / counts
    return Transform("quantile", values=_frozen(values), positions=_frozen(positions))


def transform_to_dict(t: Transform) -> dict:
    if t.kind == "clip":
        return {"kind": "clip"}
    if t.kind == "minmax":
        return {"kind": "minmax", "low": t.low, "high": t.high}
    return {"kind": "quantile", "values": t.values.tolist(),
            "positions": t.positions.tolist()}


def transform_from_dict(doc: dict) -> Transform:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SchemaError("transform document must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind not in TRANSFORM_KINDS:
        raise SchemaError(f"unknown transform kind {kind!r}")
    if kind == "clip":
        return Transform("clip")
    if kind == "minmax":
        try:
            low = float(doc["low"])
            high = float(doc["high"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"minmax transform is malformed: {exc}") from exc
        if not (low < high):
            raise SchemaError(f"minmax transform has low={low} >= high={high}")
        return Transform("minmax", low=low, high=high)
    try:
        values = np.asarray(doc["values"], dtype=np.float64).reshape(-1)
        positions = np.asarray(doc["positions"], dtype=np.float64).reshape(-1)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"quantile transform is malformed: {exc}") from exc
    if values.size != positions.size or values.size == 0:
        raise SchemaError("quantile transform needs matching non-empty arrays")
    if np.any(np.diff(values) <= 0.0):
        raise SchemaError("quantile transform values must be strictly increasing")
    return Transform("quantile", values=_frozen(values), positions=_frozen(positions))
