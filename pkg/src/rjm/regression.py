"""Per-group regression M-step machinery.

Lasso route (FLasso/RLasso): weighted coordinate-descent lasso in the scaled
parametrization plus the closed-form rho/chi updates and the two penalty
rules (CV-fixed and the closed-form random-penalty update).

NJ route: closed-form ridge-like updates driven by the latent-scale diagonal
U = diag(beta_j^2) from the previous iterate, with absorbing exact zeros and
an n x n alternative solve for the n < p case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import lasso_cd_gram

SIGMA2_FLOOR = 1e-12      # keeps degenerate zero-variance groups off the next E-step
NJ_ZERO_THRESHOLD = 1e-10  # on beta_j^2; once below, the coordinate is zero for good
RLASSO_BETA_EPS = 1e-8     # ||beta||_1 = 0 cap: lambda_max = base / eps


class LassoConvergenceError(RuntimeError):
    """Sweep budget exhausted; carries the last iterate."""

    def __init__(self, msg, phi, violation):
        super().__init__(msg)
        self.phi = phi
        self.violation = violation


@dataclass(frozen=True)
class WeightedLassoProblem:
    """Scaled-parametrization lasso data: solve for phi in
    0.5*||M^(1/2) (rho*y - chi*1 - X phi)||^2 + lam*||phi||_1."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    chi: float
    rho: float
    lam: float
    tol: float = 1e-7
    max_sweeps: int = 1000

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("weights must be finite and non-negative")
        if not w.sum() > 0:
            raise ValueError("weights must not be identically zero")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


def weighted_lasso_cd(prob, phi0=None):
    """Solve the weighted lasso of Eq.-form above; returns phi (length p).

    Optimality: every coordinate satisfies the soft-threshold stationarity
    condition within ``prob.tol``.
    """
    x = np.asarray(prob.x, dtype=np.float64)
    w = np.asarray(prob.weights, dtype=np.float64)
    z = prob.rho * np.asarray(prob.y, dtype=np.float64) - prob.chi
    xw = x * w[:, None]
    gram = x.T @ xw
    rhs = xw.T @ z
    phi, sweeps, viol = lasso_cd_gram(gram, rhs, prob.lam, tol=prob.tol,
                                      max_sweeps=prob.max_sweeps, x0=phi0)
    if viol > prob.tol:
        raise LassoConvergenceError(
            f"lasso did not converge in {prob.max_sweeps} sweeps (violation {viol:g})",
            phi=phi, violation=viol)
    return phi


def update_rho(y, weights, chi, phi, x, p_dim):
    """Positive root of the 1-d concave problem in rho with (chi, phi) fixed:
    rho = (b + sqrt(b^2 + 4 a (n_k + p + 2))) / (2 a), a = y'My, b = y'M(chi*1 + X phi)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    wy = w * y
    a = float(wy @ y)
    if not a > 0:
        raise ValueError("y'My must be positive to update rho")
    fitted = chi + np.asarray(x) @ np.asarray(phi)
    b = float(wy @ fitted)
    nu = float(w.sum()) + p_dim + 2.0
    return (b + np.sqrt(b * b + 4.0 * a * nu)) / (2.0 * a)


def update_chi(y, x, weights, rho, phi):
    """Weighted mean of (rho*y - X phi) under the responsibility weights."""
    w = np.asarray(weights, dtype=np.float64)
    n_k = float(w.sum())
    if not n_k > 0:
        raise ValueError("weight sum must be positive")
    resid = rho * np.asarray(y) - np.asarray(x) @ np.asarray(phi)
    return float(w @ resid) / n_k


def rlasso_lambda(beta_l1, sigma, p_dim, n_k, c):
    """Closed-form random-penalty update: (c/||beta||_1) * sigma * sqrt(2 log p / n_k).

    A zero ||beta||_1 returns the capped maximum (base / 1e-8) rather than
    infinity, pushing toward heavy but finite penalization.
    """
    if not n_k > 0:
        raise ValueError("n_k must be positive")
    base = c * sigma * np.sqrt(2.0 * np.log(p_dim) / n_k)
    if beta_l1 <= 0:
        return base / RLASSO_BETA_EPS
    return base / beta_l1


def flasso_cv(x, y, hard_labels, folds=5, grid_size=50, seed=0):
    """Per-group CV penalty for the fixed-penalty lasso.

    For each group (sorted unique label), runs ``folds``-fold CV of a plain
    lasso on the hard-assigned subset over a log-spaced grid (4 decades down
    from lambda_max = max_j |x_j'(y - ybar)| / n_k, the mean-squared-error
    scale) and returns the selected penalty rescaled by n_k so it applies
    directly to the unscaled working objective.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(hard_labels)
    out = []
    for g in np.unique(labels):
        sel = labels == g
        n_g = int(sel.sum())
        if n_g < folds:
            raise ValueError(f"group {g} has {n_g} members, fewer than {folds} folds")
        # same fold stream for every group: identical groups get identical folds
        rng = np.random.default_rng([seed, 17])
        out.append(_cv_one_group(x[sel], y[sel], folds, grid_size, rng) * n_g)
    return np.array(out)


def _cv_one_group(x, y, folds, grid_size, rng):
    n = len(y)
    yc = y - y.mean()
    lam_max = np.abs(x.T @ yc).max() / n
    if lam_max <= 0:
        lam_max = 1.0
    grid = np.geomspace(lam_max, lam_max * 1e-4, grid_size)
    perm = rng.permutation(n)
    bounds = np.linspace(0, n, folds + 1).astype(int)
    cv_err = np.zeros(grid_size)
    for f in range(folds):
        val = perm[bounds[f]:bounds[f + 1]]
        tr = np.concatenate([perm[:bounds[f]], perm[bounds[f + 1]:]])
        xm = x[tr].mean(axis=0)
        ym = y[tr].mean()
        xc = x[tr] - xm
        ytr = y[tr] - ym
        gram = xc.T @ xc
        rhs = xc.T @ ytr
        beta = np.zeros(x.shape[1])
        for i, lam in enumerate(grid):  # descending grid: warm starts carry over
            beta, _, _ = lasso_cd_gram(gram, rhs, lam * len(tr), tol=1e-8,
                                       max_sweeps=2000, x0=beta)
            pred = ym + (x[val] - xm) @ beta
            cv_err[i] += float(np.sum((y[val] - pred) ** 2))
    cv_err /= n
    return grid[int(np.argmin(cv_err))]


# ---------------------------------------------------------------------------
# Normal-Jeffreys updates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NJState:
    """Latent-scale diagonal u_j = beta_j^2 from the previous iterate, with the
    absorbing mask of structurally zeroed coordinates (u_j = 0 iff masked)."""

    u_diag: np.ndarray
    zero_mask: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_diag, dtype=np.float64)
        mask = np.asarray(self.zero_mask, dtype=bool)
        if u.shape != mask.shape:
            raise ValueError("u_diag and zero_mask must have the same shape")
        if not np.array_equal(u == 0.0, mask):
            raise ValueError("u_diag must be exactly zero where (and only where) masked")
        object.__setattr__(self, "u_diag", u)
        object.__setattr__(self, "zero_mask", mask)

    @classmethod
    def from_beta(cls, beta):
        beta = np.asarray(beta, dtype=np.float64)
        u = beta * beta
        mask = u < NJ_ZERO_THRESHOLD
        u = np.where(mask, 0.0, u)
        return cls(u_diag=u, zero_mask=mask)


def nj_sigma_update(y, x, weights, alpha_prev, beta_prev):
    """Weighted residual sum of squares over (n_k + 2), floored at 1e-12."""
    w = np.asarray(weights, dtype=np.float64)
    n_k = float(w.sum())
    if not n_k > 0:
        raise ValueError("weight sum must be positive")
    r = np.asarray(y) - alpha_prev - np.asarray(x) @ np.asarray(beta_prev)
    return max(float(w @ (r * r)) / (n_k + 2.0), SIGMA2_FLOOR)


def nj_alpha_update(y, x, weights, beta_prev):
    """Weighted mean of (y - X beta)."""
    w = np.asarray(weights, dtype=np.float64)
    n_k = float(w.sum())
    if not n_k > 0:
        raise ValueError("weight sum must be positive")
    r = np.asarray(y) - np.asarray(x) @ np.asarray(beta_prev)
    return float(w @ r) / n_k


def nj_beta_update(y, x, weights, sigma2_new, alpha_new, state, form=None):
    """One NJ coefficient update; returns (beta, new_state).

    Masked coordinates stay exactly zero. The p x p form is used when
    n >= p_active, the n x n (Woodbury) form when n < p_active; ``form`` in
    {"direct", "woodbury"} forces a branch (used by the equivalence tests).
    New coordinates fall into the absorbing mask once beta_j^2 drops below
    1e-10.
    """
    if not sigma2_new > 0:
        raise ValueError("sigma2 must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n, p = x.shape
    active = ~state.zero_mask
    beta = np.zeros(p)
    if active.any():
        xa = x[:, active]
        u = state.u_diag[active]
        r = y - alpha_new
        c = xa.T @ (w * r)
        if form is None:
            form = "direct" if n >= xa.shape[1] else "woodbury"
        if form == "direct":
            beta_a = _nj_beta_direct(xa, w, u, c, sigma2_new)
        elif form == "woodbury":
            beta_a = _nj_beta_woodbury(xa, w, u, c, sigma2_new)
        else:
            raise ValueError(f"unknown form {form!r}")
        beta[active] = beta_a
    new_state = NJState.from_beta(beta)
    # zeroing is absorbing: previously masked coordinates must stay masked
    mask = new_state.zero_mask | state.zero_mask
    u = np.where(mask, 0.0, new_state.u_diag)
    beta = np.where(mask, 0.0, beta)
    return beta, NJState(u_diag=u, zero_mask=mask)


def _nj_beta_direct(xa, w, u, c, sigma2):
    """p x p solve: beta = U^(1/2) (sigma2 I + U^(1/2) X'MX U^(1/2))^(-1) U^(1/2) c."""
    su = np.sqrt(u)
    gram = xa.T @ (xa * w[:, None])
    a = sigma2 * np.eye(len(u)) + (su[:, None] * gram) * su[None, :]
    try:
        z = np.linalg.solve(a, su * c)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular NJ system") from exc
    return su * z


def _nj_beta_woodbury(xa, w, u, c, sigma2):
    """n x n solve, conjugated by M^(1/2) so zero weights never hit 1/m_i:
    beta = sigma2^(-1) u*(c - Xs' H^(-1) Xs (u*c)), H = sigma2 I + Xs diag(u) Xs'."""
    sw = np.sqrt(w)
    xs = xa * sw[:, None]
    h = sigma2 * np.eye(len(w)) + (xs * u[None, :]) @ xs.T
    try:
        t = np.linalg.solve(h, xs @ (u * c))
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular NJ system") from exc
    return (u * (c - xs.T @ t)) / sigma2
