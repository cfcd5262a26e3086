"""Datasets, hyperparameters, parameter matrices and per-task standardization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when a dataset violates its shape or finiteness invariants."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DatasetError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TaskData:
    """Design matrix (n_t x D) and target vector (n_t,) of one task."""

    design: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        if design.ndim == 1 and design.size == 0:
            design = design.reshape(0, 0)
        object.__setattr__(self, "design", _frozen(design, 2, "design"))
        object.__setattr__(self, "target", _frozen(self.target, 1, "target"))
        if self.design.shape[0] != self.target.shape[0]:
            raise DatasetError(
                f"design has {self.design.shape[0]} rows but target has "
                f"{self.target.shape[0]} entries"
            )

    @property
    def n_samples(self) -> int:
        return self.design.shape[0]


@dataclass(frozen=True)
class MultiTaskDataset:
    """An ordered collection of tasks sharing the feature dimension."""

    tasks: tuple[TaskData, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "feature_dim", int(self.feature_dim))

    @classmethod
    def from_arrays(cls, designs: Sequence, targets: Sequence) -> "MultiTaskDataset":
        tasks = tuple(TaskData(X, y) for X, y in zip(designs, targets, strict=True))
        if not tasks:
            raise DatasetError("a dataset needs at least one task")
        return cls(tasks, tasks[0].design.shape[1])

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def designs(self) -> list[np.ndarray]:
        return [t.design for t in self.tasks]

    @property
    def targets(self) -> list[np.ndarray]:
        return [t.target for t in self.tasks]

    def subset(self, task_ids: Sequence[int]) -> "MultiTaskDataset":
        return MultiTaskDataset(tuple(self.tasks[i] for i in task_ids), self.feature_dim)


def validate_dataset(dataset: MultiTaskDataset) -> MultiTaskDataset:
    """Check every invariant of `dataset` and return it unchanged.

    Raises
    ------
    DatasetError
        On an empty task list, a task whose column count differs from
        ``feature_dim``, an empty task, or a non-finite entry (the message
        names the task, row and column of the first offending cell).
    """
    if dataset.n_tasks < 1:
        raise DatasetError("a dataset needs at least one task")
    D = dataset.feature_dim
    for t, task in enumerate(dataset.tasks):
        if task.design.shape[1] != D:
            raise DatasetError(
                f"dimension mismatch: task {t} has {task.design.shape[1]} features, "
                f"expected {D}"
            )
        if task.n_samples < 1:
            raise DatasetError(f"task {t} has no samples")
        bad = ~np.isfinite(task.design)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DatasetError(
                f"non-finite entry at task {t}, row {row}, column {col}: "
                f"{task.design[row, col]}"
            )
        bad = ~np.isfinite(task.target)
        if bad.any():
            row = int(np.argmax(bad))
            raise DatasetError(
                f"non-finite target at task {t}, row {row}: {task.target[row]}"
            )
    return dataset


@dataclass(frozen=True)
class Hyperparams:
    lambda1: float
    lambda2: float
    lambda3: float
    max_iters: int = 10000
    rel_tol: float = 1e-10

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite nonnegative number, got {value}")
            object.__setattr__(self, name, value)
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be positive, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        object.__setattr__(self, "rel_tol", float(self.rel_tol))

    def scaled(self, factor: float) -> "Hyperparams":
        return Hyperparams(
            self.lambda1 * factor,
            self.lambda2 * factor,
            self.lambda3 * factor,
            self.max_iters,
            self.rel_tol,
        )


@dataclass(frozen=True)
class ParamState:
    """Cluster component U and task-specific component V, both D x T.

    The combined weights ``W = U + V`` are always derived on access.
    """

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", _frozen(self.U, 2, "U"))
        object.__setattr__(self, "V", _frozen(self.V, 2, "V"))
        if self.U.shape != self.V.shape:
            raise ValueError(f"U {self.U.shape} and V {self.V.shape} differ in shape")
        if not (np.isfinite(self.U).all() and np.isfinite(self.V).all()):
            raise ValueError("parameter matrices must be finite")

    @classmethod
    def zeros(cls, D: int, T: int) -> "ParamState":
        return cls(np.zeros((D, T)), np.zeros((D, T)))

    @property
    def W(self) -> np.ndarray:
        return self.U + self.V

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape


@dataclass(frozen=True)
class StandardizationTransform:
    """Per-task feature means/scales and target means.

    ``feature_mean`` and ``feature_scale`` are T x D; ``degenerate`` flags
    zero-variance columns whose scale was forced to 1.
    """

    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "feature_mean", _frozen(self.feature_mean, 2, "feature_mean"))
        object.__setattr__(self, "feature_scale", _frozen(self.feature_scale, 2, "feature_scale"))
        object.__setattr__(self, "target_mean", _frozen(self.target_mean, 1, "target_mean"))
        if self.degenerate is None:
            degenerate = np.zeros(self.feature_mean.shape, dtype=bool)
        else:
            degenerate = np.array(self.degenerate, dtype=bool)
        degenerate.flags.writeable = False
        object.__setattr__(self, "degenerate", degenerate)
        if (self.feature_scale <= 0).any():
            raise ValueError("feature scales must be strictly positive")

    @classmethod
    def identity(cls, T: int, D: int) -> "StandardizationTransform":
        return cls(np.zeros((T, D)), np.ones((T, D)), np.zeros(T))

    @property
    def n_tasks(self) -> int:
        return self.feature_mean.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.feature_mean.shape[1]

    def transform_rows(self, rows, task: int) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        return (rows - self.feature_mean[task]) / self.feature_scale[task]

    def transform(self, dataset: MultiTaskDataset) -> MultiTaskDataset:
        """Map a raw dataset (e.g. a validation split) into the standardized space."""
        if dataset.n_tasks != self.n_tasks:
            raise DatasetError(f"expected {self.n_tasks} tasks, got {dataset.n_tasks}")
        if dataset.feature_dim != self.feature_dim:
            raise DatasetError(
                f"expected D={self.feature_dim} features, got D={dataset.feature_dim}"
            )
        tasks = tuple(
            TaskData(self.transform_rows(task.design, t).reshape(task.design.shape),
                     task.target - self.target_mean[t])
            for t, task in enumerate(dataset.tasks)
        )
        return MultiTaskDataset(tasks, dataset.feature_dim)

    def decenter(self, predictions, task: int) -> np.ndarray:
        return np.asarray(predictions, dtype=float) + self.target_mean[task]


def standardize(dataset: MultiTaskDataset) -> tuple[MultiTaskDataset, StandardizationTransform]:
    """Give every feature zero mean and unit (population) variance per task,
    and center every task's target.

    Constant columns are only centered; their scale is set to 1 and flagged
    in ``transform.degenerate``.
    """
    validate_dataset(dataset)
    T, D = dataset.n_tasks, dataset.feature_dim
    mean = np.zeros((T, D))
    scale = np.ones((T, D))
    degenerate = np.zeros((T, D), dtype=bool)
    ymean = np.zeros(T)
    for t, task in enumerate(dataset.tasks):
        if task.n_samples < 2:
            raise DatasetError(f"task {t} needs at least 2 samples to standardize")
        mean[t] = task.design.mean(axis=0)
        std = task.design.std(axis=0)
        # relative cutoff so exactly-constant columns survive float round-off
        flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean[t]))
        degenerate[t] = flat
        scale[t] = np.where(flat, 1.0, std)
        ymean[t] = task.target.mean()
    transform = StandardizationTransform(mean, scale, ymean, degenerate)
    return transform.transform(dataset), transform


def objective(state: ParamState, dataset: MultiTaskDataset, hp: Hyperparams, penalty=None) -> float:
    """Squared loss plus clustering, U-ridge and V-ridge penalties.

    ``penalty`` defaults to the uniform pairwise penalty.
    """
    from .prox import PenaltySpec, penalty_value

    if penalty is None:
        penalty = PenaltySpec.uniform()
    D, T = state.shape
    if D != dataset.feature_dim or T != dataset.n_tasks:
        raise DatasetError(
            f"state is {D}x{T} but dataset has D={dataset.feature_dim}, T={dataset.n_tasks}"
        )
    W = state.W
    loss = 0.0
    for t, task in enumerate(dataset.tasks):
        r = task.target - task.design @ W[:, t]
        loss += float(r @ r)
    return (
        loss
        + hp.lambda1 * penalty_value(state.U, penalty)
        + hp.lambda2 * float(np.sum(state.U**2))
        + hp.lambda3 * float(np.sum(state.V**2))
    )
