"""ECM engine: E-step, conditional M-steps in the block order
tau -> mu -> Omega -> lambda -> rho -> chi -> phi (NJ: sigma2 -> alpha -> beta),
objective evaluation, termination, collapse guard, and multi-start selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import glasso
from .baselines import kmeans
from .regression import (
    LassoConvergenceError,
    NJState,
    WeightedLassoProblem,
    flasso_cv,
    nj_alpha_update,
    nj_beta_update,
    nj_sigma_update,
    rlasso_lambda,
    update_chi,
    update_rho,
    weighted_lasso_cd,
)
from .types import (
    ClusterParams,
    Dataset,
    FitResult,
    Responsibilities,
    ScaledRegression,
    from_scaled,
)

LOG_2PI = np.log(2.0 * np.pi)
MIN_CLUSTER_SIZE = 5  # smallest usable k-means init cluster
INIT_ATTEMPTS = 20


class AllRunsCollapsedError(RuntimeError):
    pass


@dataclass
class EmState:
    """Working state of a single EM run."""

    params: list
    resp: Optional[Responsibilities]
    iteration: int
    objective: float
    scheme_state: object
    prev_labels: np.ndarray


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def log_joint_density(data, params):
    """n x K matrix of log tau_k + log N_p(x_i | mu_k, Omega_k) + log N(y_i | ...)."""
    n, p = data.X.shape
    out = np.empty((n, len(params)))
    for k, cp in enumerate(params):
        chol = np.linalg.cholesky(cp.omega)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        d = data.X - cp.mu
        t = d @ chol
        quad = np.einsum("ij,ij->i", t, t)
        lx = 0.5 * logdet - 0.5 * quad - 0.5 * p * LOG_2PI
        r = data.y - cp.alpha - data.X @ cp.beta
        ly = -0.5 * np.log(cp.sigma2) - 0.5 * LOG_2PI - (r * r) / (2.0 * cp.sigma2)
        out[:, k] = np.log(cp.tau) + lx + ly
    return out


def e_step(data, params):
    """Posterior membership probabilities, computed in log space."""
    logd = log_joint_density(data, params)
    row_max = logd.max(axis=1)
    dead = ~np.isfinite(row_max)
    if dead.any():
        raise ValueError(f"all {len(params)} log-densities are -inf for row {int(np.flatnonzero(dead)[0])}")
    m = np.exp(logd - row_max[:, None])
    m /= m.sum(axis=1)[:, None]
    return Responsibilities(m=m)


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------

def m_step_x(data, resp, psi_tilde, prev_omegas=None, glasso_tol=1e-5,
             glasso_max_sweeps=200):
    """Per-group (mu, omega): weighted mean and graphical lasso on the
    weighted covariance with penalty psi_tilde / n_k.

    When previous-iterate precisions are supplied they warm-start the solver,
    and whichever of {solver output, previous omega} scores better on the new
    penalized glasso objective is kept (a valid conditional-maximization
    choice that keeps the EM ascent certificate tight).
    """
    out = []
    for k in range(resp.k):
        w = resp.m[:, k]
        n_k = resp.n_k[k]
        if not n_k > 0:
            raise ValueError(f"group {k + 1} has zero effective size")
        mu = (w @ data.X) / n_k
        d = data.X - mu
        s = (d * w[:, None]).T @ d / n_k
        zeta = max(psi_tilde / n_k, 1e-12)
        prev = None if prev_omegas is None else prev_omegas[k]
        try:
            omega = glasso.solve(glasso.GlassoProblem(
                s=s, rho=zeta, tol=glasso_tol, max_sweeps=glasso_max_sweeps),
                omega0=prev)
        except glasso.GlassoConvergenceError as exc:
            raise glasso.GlassoConvergenceError(
                f"group {k + 1}: {exc}", exc.omega, exc.residual) from exc
        except glasso.GlassoError as exc:
            raise glasso.GlassoError(f"group {k + 1}: {exc}") from exc
        if prev is not None and (glasso.objective(s, zeta, prev)
                                 > glasso.objective(s, zeta, omega)):
            omega = prev
        out.append((mu, omega))
    return out


def m_step_y(data, resp, params, scheme, scheme_state, config):
    """Regression block updates in the paper's stale-value order.

    Lasso schemes: lambda -> rho (old chi, phi) -> chi (new rho, old phi)
    -> phi (new rho, chi). NJ: sigma2 (old alpha, beta) -> alpha (old beta)
    -> beta (new sigma2, alpha). Returns (per-group dicts, new scheme_state).
    """
    y, x = data.y, data.X
    p = data.p
    updates = []
    if scheme in ("flasso", "rlasso"):
        lambdas = []
        for k, cp in enumerate(params):
            w = resp.m[:, k]
            n_k = float(resp.n_k[k])
            if scheme == "flasso":
                lam = float(scheme_state["lambdas"][k])
            else:
                lam = rlasso_lambda(float(np.abs(cp.beta).sum()), np.sqrt(cp.sigma2),
                                    p, n_k, config.c)
            s = cp.scaled()
            rho_new = update_rho(y, w, s.chi, s.phi, x, p)
            chi_new = update_chi(y, x, w, rho_new, s.phi)
            prob = WeightedLassoProblem(x=x, y=y, weights=w, chi=chi_new,
                                        rho=rho_new, lam=lam)
            phi_new = weighted_lasso_cd(prob, phi0=s.phi)
            alpha, beta, sigma2 = from_scaled(
                ScaledRegression(chi=chi_new, phi=phi_new, rho=rho_new))
            updates.append({"alpha": alpha, "beta": beta, "sigma2": sigma2, "lam": lam})
            lambdas.append(lam)
        return updates, scheme_state
    if scheme == "nj":
        new_states = []
        for k, cp in enumerate(params):
            w = resp.m[:, k]
            sigma2_new = nj_sigma_update(y, x, w, cp.alpha, cp.beta)
            alpha_new = nj_alpha_update(y, x, w, cp.beta)
            beta_new, st = nj_beta_update(y, x, w, sigma2_new, alpha_new,
                                          scheme_state[k])
            updates.append({"alpha": alpha_new, "beta": beta_new,
                            "sigma2": sigma2_new, "lam": None})
            new_states.append(st)
        return updates, new_states
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Objective (expected penalized complete log-likelihood, constants dropped)
# ---------------------------------------------------------------------------

def objective_components(data, params, weights, scheme, lambdas=None,
                         nj_states=None, psi_tilde=None, c=0.25):
    """(Q^Y, Q^X, Q^Z) under responsibility weights (n x K).

    For NJ the quadratic prior term uses the latent-scale diagonal from
    ``nj_states`` (previous iterate); structural zeros contribute 0.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n, p = data.X.shape
    n_k = weights.sum(axis=0)
    if psi_tilde is None:
        psi_tilde = np.sqrt(2.0 * n * np.log(p)) / 2.0

    q_z = float(np.sum(n_k * np.log([cp.tau for cp in params])))

    q_x = 0.0
    for k, cp in enumerate(params):
        chol = np.linalg.cholesky(cp.omega)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        d = data.X - cp.mu
        t = d @ chol
        quad = np.einsum("ij,ij->i", t, t)
        q_x += 0.5 * (n_k[k] * logdet - float(weights[:, k] @ quad)
                      - psi_tilde * float(np.abs(cp.omega).sum()))

    q_y = 0.0
    for k, cp in enumerate(params):
        w = weights[:, k]
        if scheme in ("flasso", "rlasso"):
            lam = float(lambdas[k]) if lambdas is not None else float(cp.lam)
            s = cp.scaled()
            r = s.rho * data.y - s.chi - data.X @ s.phi
            q_y += (-0.5 * float(w @ (r * r))
                    - lam * float(np.abs(s.phi).sum())
                    + (n_k[k] + p + 2.0) * np.log(s.rho))
            if scheme == "rlasso":
                coef = c * np.sqrt(2.0 * np.log(p) / n_k[k])
                if coef > 0:
                    q_y += coef * np.log(lam)
        else:
            r = data.y - cp.alpha - data.X @ cp.beta
            if nj_states is not None:
                st = nj_states[k]
                active = ~st.zero_mask
                v_term = float(np.sum(cp.beta[active] ** 2 / st.u_diag[active]))
            else:
                v_term = float(np.count_nonzero(cp.beta))
            q_y += -0.5 * (float(w @ (r * r)) / cp.sigma2 + v_term
                           + (n_k[k] + 2.0) * np.log(cp.sigma2))
    return q_y, q_x, q_z


def objective(data, params, weights, scheme, lambdas=None, nj_states=None,
              psi_tilde=None, c=0.25):
    """Scheme-appropriate Q = Q^Y + Q^X + Q^Z."""
    q_y, q_x, q_z = objective_components(data, params, weights, scheme,
                                         lambdas, nj_states, psi_tilde, c)
    return q_y + q_x + q_z


def penalized_likelihood(data, params, scheme, psi_tilde=None, c=0.25,
                         n_k=None):
    """Penalized observed log-likelihood (the monotone EM certificate and the
    quantity traced/used for termination).

    Mixture log-likelihood plus the scheme's log-prior terms. The NJ prior is
    clamped at the absorbing-zero threshold, -sum_j log max(|beta_j|, 1e-5),
    so structural zeros contribute a frozen finite value. RLasso adds its
    n_k-dependent prior term (its trace is not monotone by construction).
    """
    n, p = data.X.shape
    if psi_tilde is None:
        psi_tilde = np.sqrt(2.0 * n * np.log(p)) / 2.0
    logd = log_joint_density(data, params)
    row_max = logd.max(axis=1)
    ll = float(np.sum(np.log(np.sum(np.exp(logd - row_max[:, None]), axis=1))
                      + row_max))
    pen = 0.0
    for k, cp in enumerate(params):
        pen -= 0.5 * psi_tilde * float(np.abs(cp.omega).sum())
        if scheme in ("flasso", "rlasso"):
            s = cp.scaled()
            pen += -cp.lam * float(np.abs(s.phi).sum()) + (p + 2.0) * np.log(s.rho)
            if scheme == "rlasso":
                nk = float(n_k[k]) if n_k is not None else cp.tau * n
                coef = c * np.sqrt(2.0 * np.log(p) / nk)
                if coef > 0:
                    pen += coef * np.log(cp.lam)
        else:
            clamped = np.maximum(np.abs(cp.beta), 1e-5)
            pen += -float(np.sum(np.log(clamped))) - np.log(cp.sigma2)
    return ll + pen


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def initialize(data, config, start_index=0):
    """k-means labels -> per-group moment/ridge estimates, with Gaussian
    perturbations of (mu, beta, sigma2, diag Sigma) for start_index > 0."""
    n, p = data.X.shape
    col_sd = data.X.std(axis=0)
    x_std = (data.X - data.X.mean(axis=0)) / np.maximum(col_sd, 1e-12)

    labels = None
    for attempt in range(INIT_ATTEMPTS):
        rng = np.random.default_rng([config.seed, 1001, attempt])
        cand, _ = kmeans(x_std, config.k, rng, n_init=10)
        counts = np.bincount(cand, minlength=config.k)
        if counts.min() >= max(MIN_CLUSTER_SIZE, 2):
            labels = cand
            break
    if labels is None:
        raise ValueError(
            f"k-means produced a cluster smaller than {MIN_CLUSTER_SIZE} in all "
            f"{INIT_ATTEMPTS} attempts; too little data for k={config.k}")

    rng_pert = np.random.default_rng([config.seed, 7919, start_index])
    beta_scale = data.y.std() / np.maximum(col_sd, 1e-12)
    params = []
    for k in range(config.k):
        sel = labels == k
        xk, yk = data.X[sel], data.y[sel]
        n_k = len(yk)
        mu = xk.mean(axis=0)
        s = np.cov(xk, rowvar=False, bias=True)
        s = np.atleast_2d(s)
        sigma = s + (0.1 * np.trace(s) / p + 1e-8) * np.eye(p)
        xm, ym = xk.mean(axis=0), yk.mean()
        xc = xk - xm
        beta = np.linalg.solve(xc.T @ xc + np.eye(p), xc.T @ (yk - ym))
        alpha = ym - xm @ beta
        sigma2 = max(float(np.mean((yk - ym - xc @ beta) ** 2)), 1e-12)
        if start_index > 0:
            mu = mu + 0.1 * col_sd * rng_pert.standard_normal(p)
            beta = beta + 0.1 * beta_scale * rng_pert.standard_normal(p)
            sigma2 = sigma2 * float(np.exp(rng_pert.normal(0.0, 0.1)))
            infl = 1.0 + np.abs(rng_pert.normal(0.0, 0.1, size=p))
            sigma = sigma.copy()
            sigma[np.diag_indices(p)] *= infl
        omega = np.linalg.inv(sigma)
        omega = (omega + omega.T) / 2.0
        params.append(ClusterParams(tau=n_k / n, mu=mu, omega=omega,
                                    alpha=alpha, beta=beta, sigma2=sigma2,
                                    sigma_x=(sigma + sigma.T) / 2.0))
    one_hot = np.zeros((n, config.k))
    one_hot[np.arange(n), labels] = 1.0
    return EmState(params=params, resp=Responsibilities(m=one_hot), iteration=0,
                   objective=-np.inf, scheme_state=None, prev_labels=labels.copy())


# ---------------------------------------------------------------------------
# Fit
# ---------------------------------------------------------------------------

def _init_scheme_state(data, config, state):
    if config.scheme == "flasso":
        lambdas = flasso_cv(data.X, data.y, state.prev_labels,
                            folds=config.cv_folds, seed=config.seed)
        return {"phase": "initial", "lambdas": lambdas}
    if config.scheme == "nj":
        return [NJState.from_beta(cp.beta) for cp in state.params]
    return None


def _rebuild_params(params, x_parts, y_parts, taus):
    out = []
    for cp, (mu, omega), upd, tau in zip(params, x_parts, y_parts, taus):
        out.append(ClusterParams(tau=tau, mu=mu, omega=omega,
                                 alpha=upd["alpha"], beta=upd["beta"],
                                 sigma2=upd["sigma2"], lam=upd["lam"]))
    return out


def _discarded_result(state, start_index, trace):
    resp = state.resp
    labels = resp.hard_labels()
    return FitResult(params=state.params, resp=resp, labels=labels,
                     objective_trace=trace, converged=False, discarded=True,
                     start_index=start_index)


def run_single(data, config, start_index, progress=None):
    """One EM run; may return a discarded result (collapse guard, numerical
    failure in a sub-solver, or a CV group below the fold count)."""
    n, p = data.X.shape
    psi_tilde = config.psi_tilde(n, p)
    state = initialize(data, config, start_index)
    try:
        state.scheme_state = _init_scheme_state(data, config, state)
    except ValueError:
        return _discarded_result(state, start_index, [])
    trace = []
    converged = False
    guard = n / (config.min_group_frac_divisor * config.k)

    for it in range(config.max_iter):
        try:
            resp = e_step(data, state.params)
        except ValueError:
            return _discarded_result(state, start_index, trace)
        state.resp = resp
        if resp.n_k.min() <= guard:
            return _discarded_result(state, start_index, trace)
        labels = np.argmax(resp.m, axis=1)

        if config.scheme == "flasso":
            phase = state.scheme_state["phase"]
            if phase == "initial" and (np.array_equal(labels, state.prev_labels)
                                       or it == config.max_iter // 2):
                try:
                    lambdas = flasso_cv(data.X, data.y, labels,
                                        folds=config.cv_folds,
                                        seed=config.seed)
                except ValueError:
                    return _discarded_result(state, start_index, trace)
                state.scheme_state = {"phase": "refit", "lambdas": lambdas}
            elif phase == "refit":
                state.scheme_state = {"phase": "fixed",
                                      "lambdas": state.scheme_state["lambdas"]}

        try:
            x_parts = m_step_x(data, resp, psi_tilde,
                               prev_omegas=[cp.omega for cp in state.params])
            y_parts, new_scheme_state = m_step_y(data, resp, state.params,
                                                 config.scheme,
                                                 state.scheme_state, config)
        except (glasso.GlassoConvergenceError, LassoConvergenceError,
                np.linalg.LinAlgError, ValueError):
            return _discarded_result(state, start_index, trace)
        taus = resp.n_k / n
        state.params = _rebuild_params(state.params, x_parts, y_parts, taus)

        q = penalized_likelihood(data, state.params, config.scheme,
                                 psi_tilde=psi_tilde, c=config.c,
                                 n_k=resp.n_k)
        trace.append(q)
        state.objective = q
        state.iteration = it + 1
        if config.scheme == "nj":
            state.scheme_state = new_scheme_state

        if progress is not None:
            progress({"start_index": start_index, "iteration": it,
                      "objective": q, "n_k": resp.n_k.copy(),
                      "label_changes": int(np.sum(labels != state.prev_labels))})
        state.prev_labels = labels

        if it >= 1:
            q_prev = trace[-2]
            if abs(q_prev) <= 1e-12:
                done = abs(q - q_prev) <= config.tol
            else:
                done = abs(q / q_prev - 1.0) <= config.tol
            if done:
                converged = True
                break

    final_resp = e_step(data, state.params)
    return FitResult(params=state.params, resp=final_resp,
                     labels=final_resp.hard_labels(), objective_trace=trace,
                     converged=converged, discarded=False,
                     start_index=start_index)


def fit(data, config, progress=None):
    """Multi-start ECM fit; returns the non-discarded run with the highest
    final objective (ties broken by start index)."""
    if not isinstance(data, Dataset):
        data = Dataset(X=np.asarray(data[0]), y=np.asarray(data[1]))
    if data.n < MIN_CLUSTER_SIZE * config.k:
        raise ValueError(f"need at least {MIN_CLUSTER_SIZE * config.k} samples for k={config.k}")
    results = [run_single(data, config, si, progress=progress)
               for si in range(config.n_starts)]
    kept = [r for r in results if not r.discarded]
    if not kept:
        raise AllRunsCollapsedError(
            "every EM start was discarded (collapse guard or solver failure); "
            "try a smaller k or a different seed")
    return max(kept, key=lambda r: (r.objective, -r.start_index))
