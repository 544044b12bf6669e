"""Exception types raised across the package.

Everything derives from :class:`CovcastError` so callers can catch the
package's failures with a single handler while still distinguishing the
specific condition.
"""

from __future__ import annotations


class CovcastError(Exception):
    """Base class for all errors raised by covcast."""


class DimensionMismatch(CovcastError):
    """Operands have incompatible shapes; message names both dimensions."""


class NotPositiveDefinite(CovcastError):
    """A matrix required to be positive definite failed factorization."""


class NonPositiveDiagonal(CovcastError):
    """A whitening factor's diagonal came out non-positive."""


class InsufficientHistory(CovcastError):
    """A rolling predictor was evaluated with too few prior outcomes."""


class SingularCovariance(CovcastError):
    """An empirical second moment is singular (for example N < n)."""


class InvalidMemory(CovcastError):
    """A rolling window length is unusable (for example M < n)."""


class InvalidPermutation(CovcastError):
    """A reorder specification is not a bijection on the outcome indices."""


class DegenerateColumn(CovcastError):
    """A feature column is constant where a spread is required."""


class SolverFailure(CovcastError):
    """The optimizer stopped without reaching the requested tolerance."""


class LineSearchFailure(SolverFailure):
    """No acceptable step existed along a search direction.

    This usually indicates an inconsistent objective/gradient pair and is
    surfaced rather than retried.
    """


class ParseError(CovcastError):
    """A data file could not be parsed; carries row and column context."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class RecipeError(CovcastError):
    """A fit recipe is invalid; carries the offending field path."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class SchemaError(CovcastError):
    """A serialized document does not match the expected schema."""


class VersionMismatch(CovcastError):
    """A serialized document declares an unsupported schema version."""
