"""Shared data model: dataset, per-group parameter blocks, responsibilities,
fit configuration/result, and the natural <-> scaled regression
reparametrization used by the lasso updates.

Parameters are stored in natural form (alpha, beta, sigma2); the scaled form
(chi, phi, rho) = (alpha/sigma, beta/sigma, 1/sigma) is computed transiently
for the lasso M-steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SCHEMES = ("flasso", "rlasso", "nj")


def _readonly(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix X (n x p) with response vector y (length n)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: Optional[list] = None

    def __post_init__(self):
        X = _readonly(np.atleast_2d(self.X))
        y = _readonly(np.atleast_1d(self.y))
        if X.ndim != 2 or y.ndim != 1:
            raise ValueError("X must be 2-d and y 1-d")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.isfinite(X).all() or not np.isfinite(y).all():
            raise ValueError("dataset contains non-finite values")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise ValueError("feature_names length does not match number of columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ScaledRegression:
    """Scaled regression block: chi = alpha/sigma, phi = beta/sigma, rho = 1/sigma."""

    chi: float
    phi: np.ndarray
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        object.__setattr__(self, "phi", _readonly(self.phi))
        object.__setattr__(self, "chi", float(self.chi))
        object.__setattr__(self, "rho", float(self.rho))


def to_scaled(alpha, beta, sigma2):
    """Map natural regression parameters to the scaled parametrization."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    sigma = np.sqrt(sigma2)
    return ScaledRegression(chi=alpha / sigma, phi=np.asarray(beta) / sigma, rho=1.0 / sigma)


def from_scaled(s):
    """Invert :func:`to_scaled`; returns (alpha, beta, sigma2)."""
    if not s.rho > 0:
        raise ValueError(f"rho must be positive, got {s.rho}")
    sigma = 1.0 / s.rho
    return s.chi * sigma, s.phi * sigma, sigma * sigma


@dataclass(frozen=True)
class ClusterParams:
    """One group's full parameter block.

    `omega` is the canonical precision matrix; `sigma_x` caches its inverse
    and is recomputed whenever omega changes. `lam` is the regression penalty
    (FLasso/RLasso only; None under NJ).
    """

    tau: float
    mu: np.ndarray
    omega: np.ndarray
    alpha: float
    beta: np.ndarray
    sigma2: float
    lam: Optional[float] = None
    sigma_x: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        mu = _readonly(self.mu)
        beta = _readonly(self.beta)
        omega = _readonly(self.omega)
        p = mu.shape[0]
        if omega.shape != (p, p) or beta.shape != (p,):
            raise ValueError("inconsistent parameter dimensions")
        asym = np.abs(omega - omega.T).max() if p else 0.0
        if asym > 1e-10:
            raise ValueError(f"omega asymmetric (max |omega - omega'| = {asym:g})")
        sigma_x = self.sigma_x
        if sigma_x is None:
            try:
                sigma_x = np.linalg.inv(omega)
            except np.linalg.LinAlgError as exc:
                raise ValueError("omega is singular") from exc
            sigma_x = (sigma_x + sigma_x.T) / 2.0
        sigma_x = _readonly(sigma_x)
        # cheap PD certificate: Cholesky fails iff omega is not PD
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as exc:
            raise ValueError("omega is not positive definite") from exc
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "lam", None if self.lam is None else float(self.lam))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "sigma_x", sigma_x)

    @property
    def p(self):
        return self.mu.shape[0]

    def scaled(self):
        return to_scaled(self.alpha, self.beta, self.sigma2)


@dataclass(frozen=True)
class Responsibilities:
    """Row-stochastic n x K matrix of posterior membership probabilities."""

    m: np.ndarray
    n_k: np.ndarray = None

    def __post_init__(self):
        m = _readonly(np.atleast_2d(self.m))
        row_sums = m.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-12:
            raise ValueError("responsibility rows must sum to 1")
        if m.min() < 0 or m.max() > 1:
            raise ValueError("responsibilities must lie in [0, 1]")
        n_k = m.sum(axis=0) if self.n_k is None else np.asarray(self.n_k, dtype=np.float64)
        if np.abs(n_k - m.sum(axis=0)).max() > 1e-10:
            raise ValueError("n_k inconsistent with column sums")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n_k", _readonly(n_k))

    @property
    def n(self):
        return self.m.shape[0]

    @property
    def k(self):
        return self.m.shape[1]

    def hard_labels(self):
        """1-based argmax labels."""
        return np.argmax(self.m, axis=1) + 1


@dataclass(frozen=True)
class FitConfig:
    """EM controls: cluster count, regularization scheme and its knobs,
    multi-start/termination settings, and the master seed."""

    k: int = 2
    scheme: str = "nj"
    c: float = 0.25
    psi: object = "universal"  # "universal" -> sqrt(2 n log p)/2, else a float
    n_starts: int = 10
    max_iter: int = 20
    tol: float = 1e-6
    min_group_frac_divisor: float = 10.0
    seed: int = 0
    cv_folds: int = 5

    def __post_init__(self):
        object.__setattr__(self, "scheme", str(self.scheme).lower())
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.k < 1 or self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("k, n_starts and max_iter must all be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.psi != "universal" and not float(self.psi) > 0:
            raise ValueError("psi must be 'universal' or a positive real")

    def psi_tilde(self, n, p):
        """Glasso penalty scale: the plug-in threshold unless overridden."""
        if self.psi == "universal":
            return np.sqrt(2.0 * n * np.log(p)) / 2.0
        return float(self.psi)


@dataclass(frozen=True)
class FitResult:
    """Outcome of one selected EM run."""

    params: list
    resp: Responsibilities
    labels: np.ndarray  # 1-based hard assignments
    objective_trace: list
    converged: bool
    discarded: bool = False
    start_index: int = 0

    def __post_init__(self):
        labels = _readonly(self.labels, dtype=np.int64)
        if not np.array_equal(labels, self.resp.hard_labels()):
            raise ValueError("labels must be the row argmax of the responsibilities")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "objective_trace", [float(q) for q in self.objective_trace])

    @property
    def k(self):
        return len(self.params)

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else -np.inf


# ---------------------------------------------------------------------------
# JSON serialization (field names and float formatting are part of the file
# format: 17 significant digits, matrices as row-major nested lists)
# ---------------------------------------------------------------------------

def _write_json(x, out, indent, level):
    pad = " " * (indent * (level + 1))
    close_pad = " " * (indent * level)
    if isinstance(x, bool) or x is None:
        out.append("true" if x is True else "false" if x is False else "null")
    elif isinstance(x, (float, np.floating)):
        out.append(format(float(x), ".17g"))
    elif isinstance(x, (int, np.integer)):
        out.append(str(int(x)))
    elif isinstance(x, str):
        out.append(json.dumps(x))
    elif isinstance(x, np.ndarray):
        _write_json(x.tolist(), out, indent, level)
    elif isinstance(x, (list, tuple)):
        if not len(x):
            out.append("[]")
            return
        out.append("[\n")
        for i, v in enumerate(x):
            out.append(pad)
            _write_json(v, out, indent, level + 1)
            out.append(",\n" if i < len(x) - 1 else "\n")
        out.append(close_pad + "]")
    elif isinstance(x, dict):
        if not x:
            out.append("{}")
            return
        out.append("{\n")
        items = list(x.items())
        for i, (k, v) in enumerate(items):
            out.append(pad + json.dumps(str(k)) + ": ")
            _write_json(v, out, indent, level + 1)
            out.append(",\n" if i < len(items) - 1 else "\n")
        out.append(close_pad + "}")
    else:
        raise TypeError(f"cannot serialize {type(x)}")


def dumps_json(obj, indent=2):
    """JSON text with floats printed at 17 significant digits."""
    out = []
    _write_json(obj, out, indent, 0)
    return "".join(out)


def cluster_params_to_dict(cp):
    d = {
        "tau": cp.tau,
        "mu": cp.mu,
        "omega": cp.omega,
        "alpha": cp.alpha,
        "beta": cp.beta,
        "sigma2": cp.sigma2,
    }
    if cp.lam is not None:
        d["lambda"] = cp.lam
    return d


def cluster_params_from_dict(d):
    return ClusterParams(
        tau=d["tau"],
        mu=np.asarray(d["mu"], dtype=np.float64),
        omega=np.asarray(d["omega"], dtype=np.float64),
        alpha=d["alpha"],
        beta=np.asarray(d["beta"], dtype=np.float64),
        sigma2=d["sigma2"],
        lam=d.get("lambda"),
    )


def fit_result_to_dict(res, scheme=None):
    d = {
        "k": res.k,
        "p": res.params[0].p if res.params else 0,
        "params": [cluster_params_to_dict(cp) for cp in res.params],
        "objective_trace": res.objective_trace,
        "converged": bool(res.converged),
        "discarded": bool(res.discarded),
        "start_index": int(res.start_index),
    }
    if scheme is not None:
        d["scheme"] = scheme
    return d


def model_params_from_dict(d):
    """Read back the parameter list of a serialized fit result."""
    return [cluster_params_from_dict(e) for e in d["params"]]
