"""NumPy implementation of the regression-whitener likelihood kernel.

This is the reference backend for :mod:`covcast.kernels`. The compiled
extension implements the same contract; both are exercised by the tests.
"""

from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def loglik_grad(diag_coef, diag_off, lower_coef, lower_off, mean_coef, mean_off,
                x, y, rows, cols, want_grad=True):
    """Summed log-likelihood of an affine whitening model over a sample block.

    Per sample the factor is L with diag(L) = diag_coef @ x + diag_off and
    packed strict lower triangle lower_coef @ x + lower_off; the optional
    mean shift is nu = mean_coef @ x + mean_off. The per-sample term is

        -(n/2) log 2 pi + sum_j log L_jj - 0.5 * ||L^T y - nu||^2

    Parameters are the coefficient blocks, the sample block (x of shape
    (N, p), y of shape (N, n)) and the packed index vectors of the strict
    lower triangle. mean_coef/mean_off may both be None for a zero-mean
    model.

    Returns
    -------
    (ok, value, grads)
        ok is False when some diagonal entry is non-positive, in which case
        value is -inf and grads is None. Otherwise value is the sum of the
        per-sample terms and grads is the tuple of gradient-block sums
        (d_diag_coef, d_diag_off, d_lower_coef, d_lower_off, d_mean_coef,
        d_mean_off), the mean blocks None for zero-mean models. grads is
        None when want_grad is False.
    """
    n_samples, n = y.shape
    k = rows.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        d = x @ diag_coef.T + diag_off
        if np.min(d) <= 0.0:
            return False, -np.inf, None
        z = d * y
        if k:
            o = x @ lower_coef.T + lower_off
            contrib = o * y[:, rows]
            scatter = np.zeros((k, n))
            scatter[np.arange(k), cols] = 1.0
            z = z + contrib @ scatter
        r = z if mean_coef is None else z - (x @ mean_coef.T + mean_off)
        value = float(
            -0.5 * n * LOG_2PI * n_samples
            + np.sum(np.log(d))
            - 0.5 * np.sum(r * r)
        )
        if not want_grad:
            return True, value, None
        gd = 1.0 / d - r * y
        d_diag_coef = gd.T @ x
        d_diag_off = gd.sum(axis=0)
        if k:
            go = -(r[:, cols] * y[:, rows])
            d_lower_coef = go.T @ x
            d_lower_off = go.sum(axis=0)
        else:
            d_lower_coef = np.zeros((0, x.shape[1]))
            d_lower_off = np.zeros(0)
        if mean_coef is None:
            d_mean_coef = None
            d_mean_off = None
        else:
            d_mean_coef = r.T @ x
            d_mean_off = r.sum(axis=0)
    return True, value, (d_diag_coef, d_diag_off, d_lower_coef, d_lower_off,
                         d_mean_coef, d_mean_off)
