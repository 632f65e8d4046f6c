"""Regularized joint mixtures: latent group discovery coupling per-group
sparse Gaussian graphical models for the features with per-group sparse
linear regressions for the response."""

__version__ = "0.1.0"

from .em import AllRunsCollapsedError, e_step, fit, initialize, objective, penalized_likelihood
from .kernels import backend_name
from .predict import Allocation, allocate, predict_y, select_k, split_dataset
from .types import (
    ClusterParams,
    Dataset,
    FitConfig,
    FitResult,
    Responsibilities,
    ScaledRegression,
    from_scaled,
    to_scaled,
)

__all__ = [
    "AllRunsCollapsedError",
    "Allocation",
    "ClusterParams",
    "Dataset",
    "FitConfig",
    "FitResult",
    "Responsibilities",
    "ScaledRegression",
    "allocate",
    "backend_name",
    "e_step",
    "fit",
    "from_scaled",
    "initialize",
    "objective",
    "penalized_likelihood",
    "predict_y",
    "select_k",
    "split_dataset",
    "to_scaled",
]
