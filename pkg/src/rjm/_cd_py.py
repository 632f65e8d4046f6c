"""Pure-numpy coordinate descent for the Gram-form lasso.

Fallback used when the compiled extension is unavailable; same contract as
``rjm._cd_fast.lasso_cd_gram``.
"""

import numpy as np


def lasso_cd_gram(A, b, lam, tol, max_sweeps, x):
    """Minimize 0.5 x'Ax - b'x + lam*||x||_1 by cyclic coordinate descent.

    A must be symmetric PSD (a Gram matrix). ``x`` is the warm start and is
    modified in place. Returns (x, sweeps_used, kkt_violation); the caller
    decides whether a violation above ``tol`` is an error.
    """
    p = b.shape[0]
    if p == 0:
        return x, 0, 0.0
    g = A @ x  # running gradient part, rebuilt exactly once per sweep
    viol = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        for j in range(p):
            ajj = A[j, j]
            xj = x[j]
            if ajj <= 0.0:
                # dead coordinate (zero column in a PSD Gram matrix)
                if xj != 0.0:
                    g -= A[:, j] * xj
                    x[j] = 0.0
                continue
            z = b[j] - g[j] + ajj * xj
            az = abs(z) - lam
            xj_new = 0.0 if az <= 0.0 else np.copysign(az, z) / ajj
            if xj_new != xj:
                g += A[:, j] * (xj_new - xj)
                x[j] = xj_new
        sweeps += 1
        g = A @ x
        viol = _kkt_violation(g, b, x, lam)
        if viol <= tol:
            break
    return x, sweeps, float(viol)


def _kkt_violation(g, b, x, lam):
    grad = g - b
    at_zero = x == 0.0
    v_zero = np.abs(grad[at_zero]) - lam
    v_active = np.abs(grad[~at_zero] + lam * np.sign(x[~at_zero]))
    worst = 0.0
    if v_zero.size:
        worst = max(worst, float(v_zero.max()))
    if v_active.size:
        worst = max(worst, float(v_active.max()))
    return worst
