"""Graphical lasso: L1-penalized sparse precision estimation.

Block coordinate descent over columns of the covariance (the standard dual
sweep), each column subproblem solved by the shared Gram-form lasso kernel.
The penalty is applied to ALL entries including the diagonal, so the working
covariance has a fixed diagonal S_jj + rho and solutions stay bounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import lasso_cd_gram


class GlassoError(ValueError):
    pass


class GlassoConvergenceError(RuntimeError):
    """Raised when the sweep budget is exhausted; carries the last iterate."""

    def __init__(self, msg, omega, residual):
        super().__init__(msg)
        self.omega = omega
        self.residual = residual


@dataclass(frozen=True)
class GlassoProblem:
    """Weighted sample covariance plus penalty and solver controls."""

    s: np.ndarray
    rho: float
    max_sweeps: int = 200
    tol: float = 1e-5

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise GlassoError("s must be a square matrix")
        if np.abs(s - s.T).max() > 1e-10:
            raise GlassoError("s must be symmetric within 1e-10")
        if not self.rho > 0:
            raise GlassoError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "rho", float(self.rho))


def solve(prob, omega0=None):
    """Maximize log|Omega| - tr(Omega S) - rho*||Omega||_1 over PD matrices.

    Returns a symmetric positive-definite precision matrix whose KKT residual
    (see :func:`kkt_residual`) is at most ``prob.tol``. ``omega0`` warm-starts
    the sweep (e.g. the previous EM iterate).
    """
    s = (prob.s + prob.s.T) / 2.0
    rho = prob.rho
    p = s.shape[0]

    eigmin = float(np.linalg.eigvalsh(s).min()) if p > 1 else float(s[0, 0])
    if eigmin < -1e-8:
        raise GlassoError(f"input covariance is not PSD (min eigenvalue {eigmin:g})")
    if eigmin < 1e-12 * max(1.0, np.trace(s) / p):
        # rank-deficient S from a tiny effective group: guard exact zeros
        s = s + (1e-8 * np.trace(s) / p) * np.eye(p)

    if p == 1:
        return np.array([[1.0 / (s[0, 0] + rho)]])

    # dual init: W = S + rho*I; the penalized diagonal stays fixed
    w = s.copy()
    w[np.diag_indices(p)] += rho
    if omega0 is not None:
        omega = np.array(omega0, dtype=np.float64)
        w_warm = np.linalg.inv(omega)
        w_warm[np.diag_indices(p)] = np.diag(w)
        w_warm = (w_warm + w_warm.T) / 2.0
        try:
            np.linalg.cholesky(w_warm)
            w = w_warm
        except np.linalg.LinAlgError:
            omega = np.diag(1.0 / np.diag(w)).copy()
    else:
        omega = np.diag(1.0 / np.diag(w)).copy()

    # stop sweeping once per-entry movement is small relative to the data scale
    offdiag = np.abs(s - np.diag(np.diag(s)))
    scale = offdiag.sum() / max(p * (p - 1), 1)
    scale = max(scale, 1e-2 * np.abs(np.diag(s)).mean(), 1e-12)
    inner_tol = 0.05 * prob.tol

    mask = ~np.eye(p, dtype=bool)
    for _ in range(prob.max_sweeps):
        omega_old = omega.copy()
        for j in range(p):
            idx = np.flatnonzero(mask[j])
            w11 = np.ascontiguousarray(w[np.ix_(idx, idx)])
            s12 = s[idx, j]
            beta0 = -omega[idx, j] / omega[j, j]
            beta, _, _ = lasso_cd_gram(w11, s12, rho, tol=inner_tol,
                                       max_sweeps=1000, x0=beta0)
            w12 = w11 @ beta
            w[idx, j] = w12
            w[j, idx] = w12
            ojj = 1.0 / (w[j, j] - w12 @ beta)
            omega[j, j] = ojj
            omega[idx, j] = -ojj * beta
            omega[j, idx] = -ojj * beta
        delta = np.abs(omega - omega_old).mean()
        if delta <= prob.tol * scale:
            residual = kkt_residual(s, rho, omega)
            if residual <= prob.tol:
                return (omega + omega.T) / 2.0
    residual = kkt_residual(s, rho, omega)
    if residual <= prob.tol:
        return (omega + omega.T) / 2.0
    raise GlassoConvergenceError(
        f"no convergence after {prob.max_sweeps} sweeps (KKT residual {residual:g})",
        omega=(omega + omega.T) / 2.0,
        residual=residual,
    )


def kkt_residual(s, rho, omega):
    """Max stationarity violation of the penalized objective at ``omega``.

    With W = Omega^{-1}: |W_ij - S_ij| <= rho must hold where omega_ij = 0,
    and W_ij - S_ij = rho*sign(omega_ij) elsewhere (diagonal included, where
    sign is +1 since omega_jj > 0).
    """
    omega = np.asarray(omega, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    try:
        w = np.linalg.inv(omega)
    except np.linalg.LinAlgError as exc:
        raise GlassoError("omega is singular") from exc
    g = w - s
    at_zero = omega == 0.0
    viol_zero = np.maximum(np.abs(g[at_zero]) - rho, 0.0)
    viol_active = np.abs(g[~at_zero] - rho * np.sign(omega[~at_zero]))
    worst = 0.0
    if viol_zero.size:
        worst = max(worst, float(viol_zero.max()))
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    return worst


def objective(s, rho, omega):
    """log|Omega| - tr(Omega S) - rho*||Omega||_1 (diagnostic/testing aid)."""
    sign, logdet = np.linalg.slogdet(omega)
    if sign <= 0:
        return -np.inf
    return logdet - float(np.sum(omega * s)) - rho * float(np.abs(omega).sum())
