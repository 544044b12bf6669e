"""Shared helpers for the test suite."""

import pathlib

import numpy as np
import pytest

from covcast import Dataset, RegressionParams
from covcast.linalg import packed_indices

DATA_DIR = pathlib.Path(__file__).parent / "data"


def dense_factors(params: RegressionParams, x: np.ndarray) -> np.ndarray:
    """Stacked dense factors L(x_i), shape (N, n, n)."""
    n = params.n
    diag = x @ params.diag_coef.T + params.diag_offset
    lower = x @ params.lower_coef.T + params.lower_offset
    rows, cols = packed_indices(n)
    out = np.zeros((x.shape[0], n, n))
    idx = np.arange(n)
    out[:, idx, idx] = diag
    if rows.size:
        out[:, rows, cols] = lower
    return out


def planted_dataset(rng, params: RegressionParams, n_samples: int,
                    timestamps: bool = False) -> Dataset:
    """Draw y_i with L(x_i)^T y_i - nu(x_i) standard normal."""
    x = rng.uniform(-1.0, 1.0, size=(n_samples, params.p))
    z = rng.normal(size=(n_samples, params.n))
    if params.with_mean:
        z = z + x @ params.mean_coef.T + params.mean_offset
    factors = dense_factors(params, x)
    y = np.linalg.solve(factors.transpose(0, 2, 1), z[:, :, None])[:, :, 0]
    ts = np.arange(n_samples, dtype=np.float64) if timestamps else None
    return Dataset(x, y, ts)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
