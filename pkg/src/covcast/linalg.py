"""Lower-triangular whitening factors and the dense operations built on them.

A whitening factor is a lower-triangular matrix L with strictly positive
diagonal. The predicted covariance it encodes is (L L^T)^{-1}, and the
whitened outcome is z = L^T y. Factors are stored packed: the diagonal as a
length-n vector and the strict lower triangle row by row (row i, columns
j < i) as a length n(n-1)/2 vector.

Covariances are recovered through triangular solves; no routine in this
module forms an explicit general inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

# A Cholesky pivot counts as positive only above this fraction of the largest
# diagonal entry of the input, making the test invariant under rescaling.
PIVOT_RTOL = 1e-13

_SYMMETRY_RTOL = 1e-12


def packed_size(n: int) -> int:
    """Number of strictly-lower-triangular entries of an n x n matrix."""
    return n * (n - 1) // 2


@lru_cache(maxsize=None)
def packed_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index vectors of the packed strict lower triangle.

    Entries are ordered row by row: (1,0), (2,0), (2,1), (3,0), ...
    Both arrays have length ``packed_size(n)`` and dtype int64.
    """
    rows = np.empty(packed_size(n), dtype=np.int64)
    cols = np.empty(packed_size(n), dtype=np.int64)
    m = 0
    for i in range(1, n):
        for j in range(i):
            rows[m] = i
            cols[m] = j
            m += 1
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LowerTriangular:
    """Packed lower-triangular factor with strictly positive diagonal.

    Parameters
    ----------
    diag:
        Diagonal entries, shape (n,), all strictly positive.
    offdiag:
        Strict lower triangle in packed row-major order, shape (n(n-1)/2,).
    """

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self) -> None:
        diag = np.atleast_1d(np.asarray(self.diag, dtype=np.float64))
        offdiag = np.asarray(self.offdiag, dtype=np.float64).reshape(-1)
        if diag.ndim != 1 or diag.size == 0:
            raise DimensionMismatch("diagonal must be a non-empty vector")
        n = diag.size
        if offdiag.size != packed_size(n):
            raise DimensionMismatch(
                f"off-diagonal length {offdiag.size} does not match "
                f"{packed_size(n)} for n={n}"
            )
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0.0):
            raise NotPositiveDefinite("factor diagonal must be finite and positive")
        object.__setattr__(self, "diag", _freeze(diag))
        object.__setattr__(self, "offdiag", _freeze(offdiag))

    @property
    def n(self) -> int:
        return self.diag.size

    @classmethod
    def identity(cls, n: int) -> "LowerTriangular":
        return cls(np.ones(n), np.zeros(packed_size(n)))

    @classmethod
    def from_dense(cls, m: np.ndarray) -> "LowerTriangular":
        """Pack the lower triangle of a square matrix; the upper part is ignored."""
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        rows, cols = packed_indices(m.shape[0])
        return cls(np.diagonal(m).copy(), m[rows, cols])

    def dense(self) -> np.ndarray:
        """Materialize the factor as a dense (n, n) array."""
        n = self.n
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = self.diag
        rows, cols = packed_indices(n)
        out[rows, cols] = self.offdiag
        return out

    def logdet(self) -> float:
        """Log-determinant of the factor, the sum of log diagonal entries."""
        return float(np.sum(np.log(self.diag)))


@dataclass(frozen=True)
class SymmetricPD:
    """Dense symmetric matrix intended to be positive definite.

    Symmetry is validated at construction (to relative tolerance 1e-12).
    Definiteness is established where the matrix is factorized; see
    :func:`cholesky`.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotPositiveDefinite("matrix entries must be finite")
        scale = np.max(np.abs(m)) if m.size else 0.0
        if np.max(np.abs(m - m.T), initial=0.0) > _SYMMETRY_RTOL * max(scale, 1e-300):
            raise DimensionMismatch("matrix is not symmetric")
        object.__setattr__(self, "entries", _freeze(m))

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def cholesky(a: SymmetricPD) -> LowerTriangular:
    """Lower Cholesky factor G of ``a`` with G G^T = a.

    Raises
    ------
    NotPositiveDefinite
        If factorization fails or any pivot is at most
        ``PIVOT_RTOL`` times the largest diagonal entry of the input.
    """
    m = a.entries
    max_diag = float(np.max(np.diagonal(m)))
    if max_diag <= 0.0:
        raise NotPositiveDefinite("largest diagonal entry is not positive")
    try:
        g = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    pivots = np.diagonal(g) ** 2
    if np.min(pivots) <= PIVOT_RTOL * max_diag:
        raise NotPositiveDefinite(
            f"pivot {np.min(pivots):.3e} below tolerance "
            f"{PIVOT_RTOL * max_diag:.3e}; matrix is numerically singular"
        )
    return LowerTriangular.from_dense(g)


def whiten_vector(l: LowerTriangular, y: np.ndarray) -> np.ndarray:
    """Apply the whitening map, returning L^T y."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (l.n,):
        raise DimensionMismatch(f"outcome has shape {y.shape}, factor expects ({l.n},)")
    return l.dense().T @ y


def solve_lower(l: LowerTriangular, rhs: np.ndarray) -> np.ndarray:
    """Solve L v = rhs by forward substitution."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != l.n:
        raise DimensionMismatch(
            f"right-hand side has leading dimension {rhs.shape[0]}, factor has n={l.n}"
        )
    return solve_triangular(l.dense(), rhs, lower=True)


def solve_lower_transpose(l: LowerTriangular, rhs: np.ndarray) -> np.ndarray:
    """Solve L^T v = rhs by back substitution."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != l.n:
        raise DimensionMismatch(
            f"right-hand side has leading dimension {rhs.shape[0]}, factor has n={l.n}"
        )
    return solve_triangular(l.dense(), rhs, lower=True, trans="T")


def covariance_from_whitener(l: LowerTriangular) -> SymmetricPD:
    """Covariance (L L^T)^{-1} encoded by a factor, via triangular solves."""
    w = solve_triangular(l.dense(), np.eye(l.n), lower=True)
    s = w.T @ w
    return SymmetricPD((s + s.T) / 2.0)


def factor_of_inverse(a: SymmetricPD) -> LowerTriangular:
    """Lower Cholesky factor T of the inverse: T T^T = a^{-1}.

    Uses the reversal identity: factoring ``a`` with rows and columns
    reversed yields an upper-triangular U with a = U U^T, and then
    T = (U^{-1})^T. One factorization and one triangular solve; the inverse
    matrix itself is never formed.
    """
    rev = np.ascontiguousarray(a.entries[::-1, ::-1])
    g = cholesky(SymmetricPD(rev))
    u = g.dense()[::-1, ::-1]
    u_inv = solve_triangular(u, np.eye(a.n), lower=False)
    return LowerTriangular.from_dense(u_inv.T)
