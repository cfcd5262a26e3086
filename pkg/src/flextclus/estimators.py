"""Fit/predict front end: FlexTClus, its adaptive two-stage variant, and the
independent-ridge and pooled-ridge baselines.

All estimators share one pipeline: standardize each task's features and
center its target, fit in the standardized space, undo the centering on
prediction.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

from .data import (
    DatasetError,
    Hyperparams,
    MultiTaskDataset,
    ParamState,
    StandardizationTransform,
    standardize,
)
from .prox import WEIGHT_CAP, PenaltySpec, adaptive_weights
from .solver import SolveReport, solve

logger = logging.getLogger(__name__)

METHODS = ("ridge", "pooling", "flextclus", "adaptive")
DEFAULT_GRID = tuple(10.0**p for p in range(-3, 4))


@dataclass(frozen=True)
class FittedModel:
    method: str
    state: ParamState
    transform: StandardizationTransform
    hp: Optional[Hyperparams]
    penalty: Optional[PenaltySpec]
    report: Optional[SolveReport] = None

    def __post_init__(self):
        D, T = self.state.shape
        if (T, D) != self.transform.feature_mean.shape:
            raise ValueError(
                f"state is {D}x{T} but transform covers {self.transform.feature_mean.shape}"
            )

    @property
    def W(self) -> np.ndarray:
        return self.state.W

    @property
    def n_tasks(self) -> int:
        return self.state.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.state.shape[0]


def fit_flextclus(dataset: MultiTaskDataset, hp: Hyperparams,
                  penalty: Optional[PenaltySpec] = None, *,
                  init: Optional[ParamState] = None, fast_lipschitz: bool = True) -> FittedModel:
    """Standardize `dataset` and solve the clustered objective (uniform penalty)."""
    std, transform = standardize(dataset)
    penalty = penalty or PenaltySpec.uniform()
    report = solve(std, hp, penalty, init, fast_lipschitz=fast_lipschitz)
    method = "flextclus" if penalty.is_uniform else "adaptive"
    return FittedModel(method, report.state, transform, hp, penalty, report)


def adaptive_penalty(W, weight_cap: float = WEIGHT_CAP,
                     nonconvex: str = "order-restricted") -> PenaltySpec:
    return PenaltySpec.adaptive(adaptive_weights(W, weight_cap), weight_cap, nonconvex)


def fit_adaptive_flextclus(dataset: MultiTaskDataset, hp_stage1: Hyperparams,
                           hp_stage2: Optional[Hyperparams] = None, *,
                           weight_cap: float = WEIGHT_CAP,
                           nonconvex: str = "order-restricted",
                           stage1: Optional[FittedModel] = None,
                           fast_lipschitz: bool = True) -> FittedModel:
    """Two-stage fit: plain fit for W, then refit with inverse-gap pair weights.

    `hp_stage2` defaults to `hp_stage1`.  A precomputed plain fit can be
    passed as `stage1` to skip the first stage.  ``nonconvex="raise"``
    rejects weight patterns that make the rank-weighted penalty nonconvex;
    the default solves such rows over the order of the prox input (see
    :class:`~flextclus.prox.PenaltySpec`).
    """
    if stage1 is None:
        stage1 = fit_flextclus(dataset, hp_stage1, fast_lipschitz=fast_lipschitz)
    penalty = adaptive_penalty(stage1.W, weight_cap, nonconvex)
    return fit_flextclus(dataset, hp_stage2 or hp_stage1, penalty,
                         init=stage1.state, fast_lipschitz=fast_lipschitz)


def _ridge_solve(X: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    A = X.T @ X + kappa * np.eye(X.shape[1])
    return scipy.linalg.solve(A, X.T @ y, assume_a="pos")


def _check_kappa(kappa: float):
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")


def fit_ridge(dataset: MultiTaskDataset, kappa: float) -> FittedModel:
    """Independent ridge per task: ``w_t = (X'X + kappa I)^-1 X'y``, stored as V."""
    _check_kappa(kappa)
    std, transform = standardize(dataset)
    W = np.column_stack([_ridge_solve(t.design, t.target, kappa) for t in std.tasks])
    state = ParamState(np.zeros_like(W), W)
    return FittedModel("ridge", state, transform, None, None)


def fit_pooling(dataset: MultiTaskDataset, kappa: float) -> FittedModel:
    """One ridge model on all tasks' standardized rows, shared by every task."""
    _check_kappa(kappa)
    std, transform = standardize(dataset)
    X = np.vstack(std.designs)
    y = np.concatenate(std.targets)
    w = _ridge_solve(X, y, kappa)
    W = np.tile(w[:, None], (1, std.n_tasks))
    return FittedModel("pooling", ParamState(np.zeros_like(W), W), transform, None, None)


def predict(model: FittedModel, rows, task: int) -> np.ndarray:
    """Predictions for raw feature rows of one task."""
    if not 0 <= task < model.n_tasks:
        raise IndexError(f"task {task} out of range for a model with {model.n_tasks} tasks")
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.feature_dim:
        raise DatasetError(f"expected D={model.feature_dim} features, got D={rows.shape[1]}")
    Z = model.transform.transform_rows(rows, task)
    return model.transform.decenter(Z @ model.W[:, task], task)


def predict_dataset(model: FittedModel, dataset: MultiTaskDataset) -> list[np.ndarray]:
    if dataset.n_tasks != model.n_tasks:
        raise DatasetError(f"model has {model.n_tasks} tasks, dataset has {dataset.n_tasks}")
    return [predict(model, t.design, i) for i, t in enumerate(dataset.tasks)]


def dataset_nmse(model: FittedModel, dataset: MultiTaskDataset) -> float:
    from .evalkit import nmse

    return nmse(predict_dataset(model, dataset), dataset.targets)


# --- validation-based selection ------------------------------------------------


@dataclass
class Selection:
    model: FittedModel
    params: dict
    val_nmse: float
    n_candidates: int


def _pick(candidates: Iterable[tuple[dict, Callable[[], FittedModel]]],
          val: MultiTaskDataset) -> Selection:
    best = None
    count = 0
    for params, make in candidates:
        model = make()
        score = dataset_nmse(model, val)
        count += 1
        if best is None or score < best.val_nmse:
            best = Selection(model, params, score, 0)
    best.n_candidates = count
    return best


def select_ridge(train, val, grid: Sequence[float] = DEFAULT_GRID) -> Selection:
    return _pick((({"kappa": k}, lambda k=k: fit_ridge(train, k)) for k in grid), val)


def select_pooling(train, val, grid: Sequence[float] = DEFAULT_GRID) -> Selection:
    return _pick((({"kappa": k}, lambda k=k: fit_pooling(train, k)) for k in grid), val)


def _lambda1_path(std, transform, val, lam2, lam3, lam1s, penalty, max_iters, rel_tol, init):
    """Best candidate along one warm-started lambda1 path (first minimum wins)."""
    best = None
    method = "flextclus" if penalty.is_uniform else "adaptive"
    for lam1 in lam1s:
        hp = Hyperparams(lam1, lam2, lam3, max_iters, rel_tol)
        report = solve(std, hp, penalty, init, fast_lipschitz=True)
        init = report.state
        model = FittedModel(method, report.state, transform, hp, penalty, report)
        score = dataset_nmse(model, val)
        if best is None or score < best.val_nmse:
            best = Selection(model, {"lambda1": lam1, "lambda2": lam2, "lambda3": lam3}, score, 0)
    return best


def _run_path(args):
    return _lambda1_path(*args)


def _grid_search(train, val, grid, penalty, max_iters, rel_tol, init_from=None,
                 workers: int = 1) -> Selection:
    """Full lambda1 x lambda2 x lambda3 grid.

    For each (lambda2, lambda3) the lambda1 path is swept upward with warm
    starts; the minimizer is unique, so warm starts only change run time.
    Paths are independent and may run on `workers` processes; ties go to
    the earliest candidate in grid order either way.
    """
    std, transform = standardize(train)
    lam1s = sorted(grid)
    jobs = [(std, transform, val, lam2, lam3, lam1s, penalty, max_iters, rel_tol, init_from)
            for lam2, lam3 in itertools.product(grid, grid)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_run_path, jobs))
    else:
        paths = [_run_path(j) for j in jobs]
    best = None
    for cand in paths:
        if best is None or cand.val_nmse < best.val_nmse:
            best = cand
    best.n_candidates = len(jobs) * len(lam1s)
    return best


def select_flextclus(train, val, grid: Sequence[float] = DEFAULT_GRID,
                     max_iters: int = 2000, rel_tol: float = 1e-7, workers: int = 1) -> Selection:
    return _grid_search(train, val, grid, PenaltySpec.uniform(), max_iters, rel_tol,
                        workers=workers)


def select_adaptive(train, val, grid: Sequence[float] = DEFAULT_GRID,
                    stage1: Optional[Selection] = None, max_iters: int = 2000,
                    rel_tol: float = 1e-7, nonconvex: str = "order-restricted",
                    workers: int = 1) -> Selection:
    """Stage 1 is the validation-selected plain fit; stage 2 is tuned on the same grid."""
    if stage1 is None:
        stage1 = select_flextclus(train, val, grid, max_iters, rel_tol, workers)
    penalty = adaptive_penalty(stage1.model.W, nonconvex=nonconvex)
    return _grid_search(train, val, grid, penalty, max_iters, rel_tol,
                        init_from=stage1.model.state, workers=workers)
