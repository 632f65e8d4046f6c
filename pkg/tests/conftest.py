import numpy as np
import pytest

from rjm.types import ClusterParams, Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_two_group_data(seed=0, n_k=50, p=10, d=1.0, slopes=(1.0, -1.0), noise=0.75):
    """Simple well-separated two-group regression mixture for EM tests."""
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((n_k, p))
    x2 = rng.standard_normal((n_k, p)) + d
    y1 = slopes[0] * x1[:, 0] + rng.normal(0, noise, n_k)
    y2 = slopes[1] * x2[:, 0] + rng.normal(0, noise, n_k)
    data = Dataset(X=np.vstack([x1, x2]), y=np.concatenate([y1, y2]))
    labels = np.repeat([1, 2], n_k)
    return data, labels


def make_cluster_params(p=3, tau=1.0, seed=0, beta=None, sigma2=1.0, alpha=0.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((p + 2, p))
    omega = a.T @ a / (p + 2) + 0.5 * np.eye(p)
    return ClusterParams(tau=tau, mu=rng.standard_normal(p), omega=omega,
                         alpha=alpha, beta=np.zeros(p) if beta is None else np.asarray(beta),
                         sigma2=sigma2)
