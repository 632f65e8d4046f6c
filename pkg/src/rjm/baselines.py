"""Built-in clustering baselines: k-means (also the EM initializer) and an
unregularized full-covariance Gaussian mixture. Kept in-repo so results are
deterministic given an explicit generator.
"""

from __future__ import annotations

import numpy as np


def _kmeans_pp_centers(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = x[rng.integers(n, size=k - j)]
            break
        probs = d2 / total
        centers[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(x, centers, max_iter=300, tol=1e-8):
    k = centers.shape[0]
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            sel = labels == j
            if sel.any():
                new_centers[j] = x[sel].mean(axis=0)
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift <= tol:
            break
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(x, k, rng, n_init=10):
    """k-means with k-means++ seeding and ``n_init`` restarts.

    Returns (labels, centers) of the lowest-inertia restart.
    """
    x = np.asarray(x, dtype=np.float64)
    if k == 1:
        return np.zeros(x.shape[0], dtype=np.int64), x.mean(axis=0, keepdims=True)
    best = None
    for _ in range(n_init):
        centers0 = _kmeans_pp_centers(x, k, rng)
        labels, centers, inertia = _lloyd(x, centers0)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best[0], best[1]


def gmm(x, k, rng, max_iter=100, tol=1e-6, reg=1e-6, n_init=5):
    """Unregularized full-covariance Gaussian mixture on x; returns hard labels.

    `reg` is only a tiny diagonal jitter to keep covariances invertible; there
    is no sparsity or shrinkage here by design (it is the plain baseline).
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    best = None
    jitter = reg * float(np.mean(np.var(x, axis=0)) + 1e-12)
    for _ in range(n_init):
        labels, centers = kmeans(x, k, rng, n_init=1)
        tau = np.bincount(labels, minlength=k).astype(float)
        tau = np.maximum(tau, 1.0)
        tau /= tau.sum()
        mus = centers.copy()
        covs = []
        for j in range(k):
            sel = labels == j
            c = np.cov(x[sel], rowvar=False, bias=True) if sel.sum() > 1 else np.eye(p)
            covs.append(np.atleast_2d(c) + jitter * np.eye(p))
        ll_prev = -np.inf
        resp = None
        for _ in range(max_iter):
            logd = np.empty((n, k))
            for j in range(k):
                try:
                    chol = np.linalg.cholesky(covs[j])
                except np.linalg.LinAlgError:
                    covs[j] = covs[j] + 10 * jitter * np.eye(p)
                    chol = np.linalg.cholesky(covs[j])
                d = x - mus[j]
                z = np.linalg.solve(chol, d.T).T
                quad = np.einsum("ij,ij->i", z, z)
                logdet = 2.0 * np.sum(np.log(np.diag(chol)))
                logd[:, j] = np.log(tau[j]) - 0.5 * (quad + logdet + p * np.log(2 * np.pi))
            mx = logd.max(axis=1)
            w = np.exp(logd - mx[:, None])
            sw = w.sum(axis=1)
            ll = float(np.sum(np.log(sw) + mx))
            resp = w / sw[:, None]
            nk = resp.sum(axis=0)
            tau = nk / n
            for j in range(k):
                mus[j] = (resp[:, j] @ x) / nk[j]
                d = x - mus[j]
                covs[j] = (d * resp[:, j, None]).T @ d / nk[j] + jitter * np.eye(p)
            if abs(ll - ll_prev) <= tol * (1.0 + abs(ll)):
                break
            ll_prev = ll
        if best is None or ll > best[0]:
            best = (ll, resp.argmax(axis=1))
    return best[1]


def gmm_xy(x, y, k, rng, **kwargs):
    """GMM on the stacked [X, y] matrix (the concatenated-data baseline)."""
    stacked = np.column_stack([np.asarray(x, dtype=np.float64),
                               np.asarray(y, dtype=np.float64)])
    return gmm(stacked, k, rng, **kwargs)
