"""Bias-corrected divide-and-conquer estimation."""

from .composition import (
    ComponentRegression,
    bc_ge,
    bc_ge_component,
    dc_expression,
    estimate_sigma2,
    lasso_full_mse,
    majority_vote_support,
    naive_average,
)
from .data_model import (
    BatchPartition,
    CompositionResult,
    LocalFit,
    RegressionDataset,
    partition_contiguous,
    partition_shuffled,
    read_dataset_csv,
)
from .local_estimators import PenaltySpec, fit_lasso, fit_ols, fit_ridge, select_lambda_cv
from .streaming import StreamState, merge, stream_finalize, stream_init, stream_update

__version__ = "0.1.0"

__all__ = [
    "BatchPartition",
    "ComponentRegression",
    "CompositionResult",
    "LocalFit",
    "PenaltySpec",
    "RegressionDataset",
    "StreamState",
    "bc_ge",
    "bc_ge_component",
    "dc_expression",
    "estimate_sigma2",
    "fit_lasso",
    "fit_ols",
    "fit_ridge",
    "lasso_full_mse",
    "majority_vote_support",
    "merge",
    "naive_average",
    "partition_contiguous",
    "partition_shuffled",
    "read_dataset_csv",
    "select_lambda_cv",
    "stream_finalize",
    "stream_init",
    "stream_update",
]
