"""Packed triangular factors and the factorization helpers."""

import numpy as np
import pytest

from covcast.errors import DimensionMismatch, NotPositiveDefinite
from covcast.linalg import (
    LowerTriangular,
    SymmetricPD,
    cholesky,
    covariance_from_whitener,
    factor_of_inverse,
    packed_indices,
    packed_size,
    solve_lower,
    solve_lower_transpose,
    whiten_vector,
)


def test_packed_size():
    assert [packed_size(n) for n in (1, 2, 3, 6)] == [0, 1, 3, 15]


def test_packed_indices_row_major():
    rows, cols = packed_indices(4)
    # strict lower triangle listed row by row
    assert rows.tolist() == [1, 2, 2, 3, 3, 3]
    assert cols.tolist() == [0, 0, 1, 0, 1, 2]


def test_dense_round_trip():
    l = LowerTriangular(np.array([2.0, 1.0, 0.5]), np.array([0.3, -0.2, 0.7]))
    dense = l.dense()
    assert np.allclose(np.triu(dense, 1), 0.0)
    back = LowerTriangular.from_dense(dense)
    assert np.array_equal(back.diag, l.diag)
    assert np.array_equal(back.offdiag, l.offdiag)
    # from_dense ignores anything above the diagonal
    noisy = dense + np.triu(np.ones((3, 3)), 1)
    again = LowerTriangular.from_dense(noisy)
    assert np.array_equal(again.offdiag, l.offdiag)


def test_identity_and_logdet():
    ident = LowerTriangular.identity(3)
    assert np.allclose(ident.dense(), np.eye(3))
    l = LowerTriangular(np.array([2.0, 4.0]), np.array([1.0]))
    assert l.logdet() == pytest.approx(np.log(8.0))


def test_rejects_bad_factors():
    with pytest.raises(NotPositiveDefinite):
        LowerTriangular(np.array([1.0, 0.0]), np.array([0.0]))
    with pytest.raises(NotPositiveDefinite):
        LowerTriangular(np.array([1.0, -2.0]), np.array([0.0]))
    with pytest.raises(DimensionMismatch):
        LowerTriangular(np.array([1.0, 2.0]), np.array([0.0, 0.0]))


def test_symmetric_pd_validates():
    with pytest.raises(DimensionMismatch):
        SymmetricPD(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        SymmetricPD(np.array([[1.0, 0.5], [0.2, 1.0]]))


def test_cholesky_matches_numpy():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5):
        r = rng.normal(size=(n, n))
        a = r @ r.T + 0.5 * np.eye(n)
        a = (a + a.T) / 2.0
        g = cholesky(SymmetricPD(a))
        assert np.allclose(g.dense(), np.linalg.cholesky(a), atol=1e-12)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky(SymmetricPD(np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_cholesky_rejects_tiny_pivot():
    # PD in exact arithmetic but with a pivot below the relative threshold
    a = np.diag([1.0, 1e-30])
    with pytest.raises(NotPositiveDefinite):
        cholesky(SymmetricPD(a))


def test_whiten_vector():
    l = LowerTriangular(np.array([2.0, 1.0]), np.array([3.0]))
    y = np.array([1.0, -1.0])
    # L^T y computed by hand: [2*1 + 3*(-1), 1*(-1)]
    assert np.allclose(whiten_vector(l, y), [-1.0, -1.0])


def test_triangular_solves():
    rng = np.random.default_rng(1)
    l = LowerTriangular(np.array([2.0, 1.5, 0.8]), rng.normal(size=3))
    b = rng.normal(size=3)
    assert np.allclose(l.dense() @ solve_lower(l, b), b)
    assert np.allclose(l.dense().T @ solve_lower_transpose(l, b), b)


def test_covariance_from_whitener_is_inverse():
    rng = np.random.default_rng(2)
    for n in (1, 3, 5):
        diag = rng.uniform(0.5, 2.0, size=n)
        off = rng.normal(size=packed_size(n)) * 0.4
        l = LowerTriangular(diag, off)
        cov = covariance_from_whitener(l).entries
        dense = l.dense()
        assert np.allclose(cov, np.linalg.inv(dense @ dense.T), atol=1e-10)
        assert np.allclose(cov, cov.T)


def test_factor_of_inverse_identity():
    g = factor_of_inverse(SymmetricPD(np.eye(4)))
    assert np.allclose(g.dense(), np.eye(4), atol=1e-14)


def test_factor_of_inverse_matches_direct_inverse():
    # oracle: explicitly invert, then Cholesky, using numpy only
    rng = np.random.default_rng(3)
    for n in (1, 2, 4, 6):
        r = rng.normal(size=(n, n))
        a = r @ r.T + 0.2 * np.eye(n)
        a = (a + a.T) / 2.0
        expected = np.linalg.cholesky(np.linalg.inv(a))
        got = factor_of_inverse(SymmetricPD(a))
        assert np.allclose(got.dense(), expected, atol=1e-10)
        # and the factor actually whitens a
        dense = got.dense()
        assert np.allclose(dense.T @ a @ dense, np.eye(n), atol=1e-10)


def test_factor_of_inverse_rejects_singular():
    with pytest.raises(NotPositiveDefinite):
        factor_of_inverse(SymmetricPD(np.array([[1.0, 1.0], [1.0, 1.0]])))


def test_frozen_arrays():
    l = LowerTriangular(np.array([1.0]), np.zeros(0))
    with pytest.raises(ValueError):
        l.diag[0] = 2.0
