# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementation of the regression-whitener likelihood kernel.

Same contract as :func:`covcast._loglik_py.loglik_grad`; see that module
for the formulas. The per-sample accumulation runs without the GIL.
"""

from libc.math cimport log
from libc.stdint cimport int64_t

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def loglik_grad(const double[:, ::1] diag_coef, const double[::1] diag_off,
                const double[:, ::1] lower_coef, const double[::1] lower_off,
                mean_coef, mean_off,
                const double[:, ::1] x, const double[:, ::1] y,
                const int64_t[::1] rows, const int64_t[::1] cols,
                bint want_grad=True):
    cdef Py_ssize_t n_samples = y.shape[0]
    cdef Py_ssize_t n = y.shape[1]
    cdef Py_ssize_t p = x.shape[1]
    cdef Py_ssize_t k = rows.shape[0]
    cdef bint has_mean = mean_coef is not None

    # Zero-size stand-ins keep the views bound when there is no mean block.
    cdef const double[:, ::1] mc = mean_coef if has_mean else np.zeros((0, 0))
    cdef const double[::1] mo = mean_off if has_mean else np.zeros(0)

    d_np = np.empty(n)
    z_np = np.empty(n)
    r_np = np.empty(n)
    gdc_np = np.zeros((n, p))
    gdo_np = np.zeros(n)
    glc_np = np.zeros((k, p))
    glo_np = np.zeros(k)
    gmc_np = np.zeros((n if has_mean else 0, p))
    gmo_np = np.zeros(n if has_mean else 0)

    cdef double[::1] d = d_np
    cdef double[::1] z = z_np
    cdef double[::1] r = r_np
    cdef double[:, ::1] gdc = gdc_np
    cdef double[::1] gdo = gdo_np
    cdef double[:, ::1] glc = glc_np
    cdef double[::1] glo = glo_np
    cdef double[:, ::1] gmc = gmc_np
    cdef double[::1] gmo = gmo_np

    cdef double value = 0.0
    cdef double acc, rv, gv
    cdef Py_ssize_t i, j, m, t
    cdef bint ok = True

    with nogil:
        for i in range(n_samples):
            for j in range(n):
                acc = diag_off[j]
                for m in range(p):
                    acc += diag_coef[j, m] * x[i, m]
                d[j] = acc
                if acc <= 0.0:
                    ok = False
                    break
            if not ok:
                break
            for j in range(n):
                z[j] = d[j] * y[i, j]
            for t in range(k):
                acc = lower_off[t]
                for m in range(p):
                    acc += lower_coef[t, m] * x[i, m]
                z[cols[t]] += acc * y[i, rows[t]]
            for j in range(n):
                rv = z[j]
                if has_mean:
                    acc = mo[j]
                    for m in range(p):
                        acc += mc[j, m] * x[i, m]
                    rv -= acc
                r[j] = rv
                value += log(d[j]) - 0.5 * rv * rv
            if want_grad:
                for j in range(n):
                    gv = 1.0 / d[j] - r[j] * y[i, j]
                    gdo[j] += gv
                    for m in range(p):
                        gdc[j, m] += gv * x[i, m]
                for t in range(k):
                    gv = -r[cols[t]] * y[i, rows[t]]
                    glo[t] += gv
                    for m in range(p):
                        glc[t, m] += gv * x[i, m]
                if has_mean:
                    for j in range(n):
                        rv = r[j]
                        gmo[j] += rv
                        for m in range(p):
                            gmc[j, m] += rv * x[i, m]

    if not ok:
        return False, -np.inf, None
    value += -0.5 * n * LOG_2PI * n_samples
    if not want_grad:
        return True, float(value), None
    return True, float(value), (gdc_np, gdo_np, glc_np, glo_np,
                                gmc_np if has_mean else None,
                                gmo_np if has_mean else None)
