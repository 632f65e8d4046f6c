"""Backend selection for the coordinate-descent kernel.

The compiled extension is preferred; ``RJM_PURE_PYTHON=1`` forces the numpy
fallback (useful for debugging and for the backend benchmark).
"""

import os

import numpy as np

from . import _cd_py

try:
    from . import _cd_fast
except ImportError:
    _cd_fast = None

if _cd_fast is not None and not os.environ.get("RJM_PURE_PYTHON"):
    _impl = _cd_fast
else:
    _impl = _cd_py


def backend_name():
    return "compiled" if _impl is _cd_fast else "python"


def lasso_cd_gram(A, b, lam, tol=1e-9, max_sweeps=1000, x0=None):
    """Solve min_x 0.5 x'Ax - b'x + lam*||x||_1 for symmetric PSD A.

    Returns (x, sweeps_used, kkt_violation). ``x0`` is copied, not mutated.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if x0 is None:
        x = np.zeros(b.shape[0])
    else:
        x = np.array(x0, dtype=np.float64, copy=True)
    return _impl.lasso_cd_gram(A, b, float(lam), float(tol), int(max_sweeps), x)
