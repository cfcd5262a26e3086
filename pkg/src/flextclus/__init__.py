"""Multitask regression with feature-wise task clustering.

Each task's weight vector is split as ``w_t = u_t + v_t``.  A pairwise
penalty on every row of ``U`` fuses tasks into clusters feature by
feature, while ``V`` absorbs task-specific deviations.  The model is fit
with FISTA using an exact ``O(T log T)`` proximal step per feature.
"""

from .data import (
    DatasetError,
    Hyperparams,
    MultiTaskDataset,
    ParamState,
    StandardizationTransform,
    TaskData,
    objective,
    standardize,
    validate_dataset,
)
from .estimators import (
    FittedModel,
    fit_adaptive_flextclus,
    fit_flextclus,
    fit_pooling,
    fit_ridge,
    predict,
    select_adaptive,
    select_flextclus,
    select_pooling,
    select_ridge,
)
from .evalkit import ClusterMatrix, extract_clusters, heatmap_svg, nmse, rand_index, rmse
from .prox import (
    NonconvexPenaltyError,
    PenaltySpec,
    oracle_prox_row,
    penalty_value,
    prox_row,
    rank_coeffs,
)
from .solver import DivergenceError, SolveReport, prop2_check, smooth_loss_and_grad, solve
from .synth import ScenarioSpec, generate, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "ClusterMatrix", "DatasetError", "DivergenceError", "FittedModel", "Hyperparams",
    "MultiTaskDataset", "NonconvexPenaltyError", "ParamState", "PenaltySpec", "ScenarioSpec",
    "SolveReport", "StandardizationTransform", "TaskData", "extract_clusters",
    "fit_adaptive_flextclus", "fit_flextclus", "fit_pooling", "fit_ridge", "generate",
    "heatmap_svg", "nmse", "objective", "oracle_prox_row", "penalty_value", "predict",
    "prop2_check", "prox_row", "rand_index", "rank_coeffs", "rmse", "run_benchmark",
    "select_adaptive", "select_flextclus", "select_pooling", "select_ridge",
    "smooth_loss_and_grad", "solve", "standardize", "validate_dataset",
]
