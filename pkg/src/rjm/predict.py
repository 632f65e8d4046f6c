"""Posterior allocation of new feature vectors, group-specific response
prediction, and predictive-loss selection of the cluster count.

Allocation uses only the feature part of the model (no response available):
pi_k ~ tau_k * N_p(x* | mu_k, Sigma_k), normalized in log space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .types import Dataset

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Allocation:
    probs: np.ndarray
    hard: int  # 1-based

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("allocation probabilities must sum to 1")
        if self.hard != int(np.argmax(probs)) + 1:
            raise ValueError("hard allocation must be the argmax")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


def _log_x_density(x, params):
    """n x K matrix of log tau_k + log N_p(x_i | mu_k, Omega_k)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = x.shape[1]
    out = np.empty((x.shape[0], len(params)))
    for k, cp in enumerate(params):
        if cp.p != p:
            raise ValueError(f"model has p={cp.p} features but input has {p}")
        chol = np.linalg.cholesky(cp.omega)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        d = x - cp.mu
        t = d @ chol
        quad = np.einsum("ij,ij->i", t, t)
        out[:, k] = np.log(cp.tau) + 0.5 * logdet - 0.5 * quad - 0.5 * p * LOG_2PI
    return out


def allocate_batch(x, params):
    """Posterior allocation probabilities (n x K) and 1-based hard labels."""
    logd = _log_x_density(x, params)
    row_max = logd.max(axis=1)
    if not np.isfinite(row_max).all():
        bad = int(np.flatnonzero(~np.isfinite(row_max))[0])
        raise ValueError(f"all group densities underflow for row {bad}")
    probs = np.exp(logd - row_max[:, None])
    probs /= probs.sum(axis=1)[:, None]
    return probs, np.argmax(probs, axis=1) + 1


def allocate(x_star, params):
    """Allocate a single feature vector."""
    probs, hard = allocate_batch(np.atleast_2d(x_star), params)
    return Allocation(probs=probs[0], hard=int(hard[0]))


def predict_batch(x, params):
    """Hard-allocate each row and apply the winning group's linear model."""
    probs, hard = allocate_batch(x, params)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y_hat = np.empty(x.shape[0])
    for k, cp in enumerate(params):
        sel = hard == k + 1
        if sel.any():
            y_hat[sel] = cp.alpha + x[sel] @ cp.beta
    return y_hat, probs, hard


def predict_y(x_star, params):
    """Point prediction for a single feature vector."""
    y_hat, _, _ = predict_batch(np.atleast_2d(x_star), params)
    return float(y_hat[0])


def group_losses(test, params):
    """Per-group mean squared prediction error on hard-allocated test points.

    Returns a list of (group, n_test, mse-or-None) with groups 1..K; empty
    test groups carry None.
    """
    _, hard = allocate_batch(test.X, params)
    rows = []
    for k, cp in enumerate(params):
        sel = hard == k + 1
        n_g = int(sel.sum())
        if n_g == 0:
            rows.append((k + 1, 0, None))
            continue
        resid = test.y[sel] - cp.alpha - test.X[sel] @ cp.beta
        rows.append((k + 1, n_g, float(np.mean(resid ** 2))))
    return rows


def select_k(train, test, candidate_ks, config, fit_fn=None):
    """Fit each candidate K on train, score by the average over non-empty test
    groups of the per-group MSE, and return (best_k, loss_table).

    The loss table rows are dicts with keys k, group, n_test, mse, mean_mse
    (the CSV schema). Candidates whose test groups are all empty are excluded
    with a warning; if every candidate is excluded an error is raised.
    """
    if test.n == 0:
        raise ValueError("test set is empty")
    from .em import AllRunsCollapsedError
    if fit_fn is None:
        from .em import fit as fit_fn
    table = []
    means = {}
    for kg in candidate_ks:
        try:
            res = fit_fn(train, replace(config, k=int(kg)))
        except AllRunsCollapsedError:
            # a candidate whose every start trips the collapse guard cannot
            # be scored; exclude it like the all-empty-test-groups case
            warnings.warn(f"candidate k={kg}: every EM start collapsed; excluded")
            table.append({"k": int(kg), "group": None, "n_test": 0,
                          "mse": None, "mean_mse": None})
            continue
        rows = group_losses(test, res.params)
        filled = [r for r in rows if r[2] is not None]
        if not filled:
            warnings.warn(f"candidate k={kg}: all test groups empty; excluded")
            mean_mse = None
        else:
            # average over non-empty groups only; counting empties as zero
            # would bias selection toward large K
            mean_mse = float(np.mean([r[2] for r in filled]))
            means[int(kg)] = mean_mse
        for group, n_g, mse in rows:
            table.append({"k": int(kg), "group": group, "n_test": n_g,
                          "mse": mse, "mean_mse": mean_mse})
    if not means:
        raise ValueError("every candidate was excluded (no test points allocated)")
    best_k = min(sorted(means), key=lambda kg: means[kg])
    return best_k, table


def split_dataset(data, train_frac=0.8, seed=0):
    """Seeded random train/test split (no stratification)."""
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must be in (0, 1)")
    rng = np.random.default_rng([seed, 8888])
    perm = rng.permutation(data.n)
    n_train = int(np.ceil(train_frac * data.n))
    tr, te = perm[:n_train], perm[n_train:]
    names = data.feature_names
    return (Dataset(X=data.X[tr], y=data.y[tr], feature_names=names),
            Dataset(X=data.X[te], y=data.y[te], feature_names=names))
