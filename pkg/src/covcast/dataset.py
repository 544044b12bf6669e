"""The paired feature/outcome sample container used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

# Features must live in the unit box; allow a hair of slack for values that
# were produced by a transform and rounded at the boundary.
_BOX_ATOL = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Aligned features and outcomes, optionally timestamped.

    Parameters
    ----------
    features:
        Array of shape (N, p) with every entry in [-1, 1]. p may be zero.
    outcomes:
        Array of shape (N, n) with n >= 1.
    timestamps:
        Optional length-N array (numeric or string), strictly increasing.
        Required by rolling-window predictors, which rely on row order
        being time order.
    """

    features: np.ndarray
    outcomes: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.outcomes, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(len(x), -1) if x.size else x.reshape(0, 0)
        if y.ndim != 2 or x.ndim != 2:
            raise DimensionMismatch(
                f"features and outcomes must be 2-d, got {x.shape} and {y.shape}"
            )
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"feature rows {x.shape[0]} != outcome rows {y.shape[0]}"
            )
        if y.shape[0] == 0 or y.shape[1] == 0:
            raise DimensionMismatch("dataset needs at least one row and one outcome")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("dataset entries must be finite")
        if x.size and np.max(np.abs(x)) > 1.0 + _BOX_ATOL:
            worst = float(np.max(np.abs(x)))
            raise ValueError(
                f"feature entries must lie in [-1, 1]; found magnitude {worst:.6g}"
            )
        ts = self.timestamps
        if ts is not None:
            ts = np.asarray(ts)
            if ts.shape != (y.shape[0],):
                raise DimensionMismatch(
                    f"timestamps length {ts.shape} does not match {y.shape[0]} rows"
                )
            if ts.size > 1 and not np.all(ts[1:] > ts[:-1]):
                raise ValueError("timestamps must be strictly increasing")
            ts = ts.copy()
            ts.setflags(write=False)
        x = x.copy()
        y = y.copy()
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "timestamps", ts)

    @property
    def n_samples(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.shape[1]

    def take(self, rows: np.ndarray) -> "Dataset":
        """Dataset restricted to the given row positions (kept in order)."""
        ts = None if self.timestamps is None else self.timestamps[rows]
        return Dataset(self.features[rows], self.outcomes[rows], ts)
