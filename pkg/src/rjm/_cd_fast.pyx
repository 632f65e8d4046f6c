# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled coordinate descent for the Gram-form lasso.

Hot kernel shared by the graphical-lasso column subproblems and the
weighted-lasso regression M-step. Mirrors rjm._cd_py.lasso_cd_gram.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def lasso_cd_gram(double[:, ::1] A, double[::1] b, double lam, double tol,
                  int max_sweeps, double[::1] x):
    """Minimize 0.5 x'Ax - b'x + lam*||x||_1 by cyclic coordinate descent.

    ``x`` is the warm start, modified in place. Returns
    (x_array, sweeps_used, kkt_violation).
    """
    cdef int p = b.shape[0]
    if p == 0:
        return np.asarray(x), 0, 0.0

    cdef cnp.ndarray[double, ndim=1] g_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] g = g_arr
    cdef int i, j, sweeps = 0
    cdef double ajj, xj, xj_new, z, az, delta, grad, v
    cdef double viol = np.inf

    _gemv(A, x, g)
    while sweeps < max_sweeps:
        for j in range(p):
            ajj = A[j, j]
            xj = x[j]
            if ajj <= 0.0:
                if xj != 0.0:
                    for i in range(p):
                        g[i] -= A[i, j] * xj
                    x[j] = 0.0
                continue
            z = b[j] - g[j] + ajj * xj
            az = fabs(z) - lam
            if az <= 0.0:
                xj_new = 0.0
            elif z > 0.0:
                xj_new = az / ajj
            else:
                xj_new = -az / ajj
            if xj_new != xj:
                delta = xj_new - xj
                for i in range(p):
                    g[i] += A[i, j] * delta
                x[j] = xj_new
        sweeps += 1
        _gemv(A, x, g)
        viol = 0.0
        for j in range(p):
            grad = g[j] - b[j]
            if x[j] == 0.0:
                v = fabs(grad) - lam
            elif x[j] > 0.0:
                v = fabs(grad + lam)
            else:
                v = fabs(grad - lam)
            if v > viol:
                viol = v
        if viol <= tol:
            break
    return np.asarray(x), sweeps, viol


cdef inline void _gemv(double[:, ::1] A, double[::1] x, double[::1] out) nogil:
    cdef int p = x.shape[0]
    cdef int i, j
    cdef double acc
    for i in range(p):
        acc = 0.0
        for j in range(p):
            acc += A[i, j] * x[j]
        out[i] = acc
