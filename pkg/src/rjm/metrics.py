"""Evaluation measures: adjusted Rand index, variable-selection AUC,
standardized-coefficient RMSE, and inclusion frequencies."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def contingency_table(labels_a, labels_b):
    """r x s count matrix of joint label frequencies."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label vectors must have equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    counts = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(counts, (ai, bi), 1)
    return counts


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand(labels_a, labels_b):
    """Chance-corrected partition agreement (the usual pair-counting form).

    Degenerate case (both partitions trivial, zero denominator): 1 if the
    partitions are identical, else 0.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    counts = contingency_table(a, b)
    sum_ij = _comb2(counts.astype(np.float64)).sum()
    sum_a = _comb2(counts.sum(axis=1).astype(np.float64)).sum()
    sum_b = _comb2(counts.sum(axis=0).astype(np.float64)).sum()
    expected = sum_a * sum_b / _comb2(float(n))
    denom = 0.5 * (sum_a + sum_b) - expected
    if denom == 0:
        _, ai = np.unique(a, return_inverse=True)
        _, bi = np.unique(b, return_inverse=True)
        return 1.0 if np.array_equal(ai, bi) else 0.0
    return float((sum_ij - expected) / denom)


def selection_auc(true_support, scores):
    """Rank-based (Mann-Whitney) AUC of |score| for support vs non-support
    coordinates; ties contribute 1/2."""
    support = np.asarray(true_support, dtype=bool)
    s = np.abs(np.asarray(scores, dtype=np.float64))
    if support.shape != s.shape:
        raise ValueError("support and scores must have equal length")
    n_t = int(support.sum())
    n_f = int((~support).sum())
    if n_t == 0 or n_f == 0:
        raise ValueError("need at least one true and one false support entry")
    ranks = rankdata(s)
    return float((ranks[support].sum() - n_t * (n_t + 1) / 2.0) / (n_t * n_f))


def coef_rmse_standardized(beta_hat, beta_true, x_sd):
    """RMSE of sd-scaled coefficients: beta_j * sd(x_j) puts groups/cases on a
    common scale."""
    bh = np.asarray(beta_hat, dtype=np.float64)
    bt = np.asarray(beta_true, dtype=np.float64)
    sd = np.asarray(x_sd, dtype=np.float64)
    if bh.shape != bt.shape or bh.shape != sd.shape:
        raise ValueError("beta_hat, beta_true and x_sd must have equal length")
    if (sd <= 0).any():
        raise ValueError("x_sd must be positive")
    return float(np.sqrt(np.mean(((bh - bt) * sd) ** 2)))


def inclusion_frequencies(results, threshold=1e-8):
    """Fraction of fitted coefficient vectors with |beta_j| > threshold."""
    if not len(results):
        raise ValueError("need at least one fitted coefficient vector")
    stack = np.vstack([np.asarray(b, dtype=np.float64) for b in results])
    return (np.abs(stack) > threshold).mean(axis=0)
