"""On-disk formats: multi-task CSV, parameter matrices, and model directories.

Floats are written with 17 significant digits, which round-trips every
double exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import DatasetError, Hyperparams, MultiTaskDataset, ParamState, StandardizationTransform, TaskData
from .prox import PenaltySpec

FLOAT_FMT = "%.17g"
MODEL_FILES = ("U.csv", "V.csv", "model.json")


class FormatError(DatasetError):
    """A file does not follow the expected layout."""


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def write_dataset_csv(dataset: MultiTaskDataset, path) -> Path:
    """One record per sample: ``task,y,x1,...,xD``."""
    path = Path(path)
    D = dataset.feature_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "y", *(f"x{j + 1}" for j in range(D))])
        for t, task in enumerate(dataset.tasks):
            for row, y in zip(task.design, task.target):
                w.writerow([t, _fmt(y), *map(_fmt, row)])
    return path


def read_dataset_csv(path) -> MultiTaskDataset:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read dataset {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["task", "y"]:
            raise FormatError(f"{path}: header must start with 'task,y', got {header!r}")
        D = len(header) - 2
        if header[2:] != [f"x{j + 1}" for j in range(D)]:
            raise FormatError(f"{path}: feature columns must be named x1..x{D}")
        rows: dict[int, list] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != D + 2:
                raise FormatError(f"{path}:{lineno}: expected {D + 2} fields, got {len(rec)}")
            try:
                t = int(rec[0])
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if t < 0:
                raise FormatError(f"{path}:{lineno}: negative task id {t}")
            rows.setdefault(t, []).append(vals)
    if not rows:
        raise FormatError(f"{path}: no samples")
    T = max(rows) + 1
    missing = sorted(set(range(T)) - set(rows))
    if missing:
        raise FormatError(f"{path}: task ids must be contiguous from 0; missing {missing[:5]}")
    tasks = []
    for t in range(T):
        a = np.array(rows[t], dtype=float).reshape(-1, D + 1)
        tasks.append(TaskData(a[:, 1:], a[:, 0]))
    return MultiTaskDataset(tuple(tasks), D)


def write_matrix_csv(M, path, integer: bool = False) -> Path:
    """D rows x T columns, no header."""
    path = Path(path)
    M = np.atleast_2d(np.asarray(M))
    np.savetxt(path, M, fmt="%d" if integer else FLOAT_FMT, delimiter=",")
    return path


def read_matrix_csv(path, integer: bool = False) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"matrix file {path} not found")
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2, dtype=int if integer else float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return M


def _transform_json(tr: StandardizationTransform) -> dict:
    return {
        "feature_mean": tr.feature_mean.tolist(),
        "feature_scale": tr.feature_scale.tolist(),
        "target_mean": tr.target_mean.tolist(),
        "degenerate": tr.degenerate.tolist(),
    }


def _hp_json(hp: Hyperparams | None):
    if hp is None:
        return None
    return {"lambda1": hp.lambda1, "lambda2": hp.lambda2, "lambda3": hp.lambda3,
            "max_iters": hp.max_iters, "rel_tol": hp.rel_tol}


def save_model(model, directory, extra: dict | None = None) -> Path:
    """Write ``U.csv``, ``V.csv`` and the ``model.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(model.state.U, directory / "U.csv")
    write_matrix_csv(model.state.V, directory / "V.csv")
    meta = {
        "method": model.method,
        "feature_dim": model.feature_dim,
        "n_tasks": model.n_tasks,
        "hyperparams": _hp_json(model.hp),
        "penalty": None if model.penalty is None else model.penalty.to_json(),
        "transform": _transform_json(model.transform),
    }
    if extra:
        meta.update(extra)
    with open(directory / "model.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return directory


def load_model(directory):
    from .estimators import FittedModel

    directory = Path(directory)
    for name in MODEL_FILES:
        if not (directory / name).is_file():
            raise FileNotFoundError(f"model file {directory / name} not found")
    with open(directory / "model.json") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{directory / 'model.json'}: {exc}") from exc
    U = read_matrix_csv(directory / "U.csv")
    V = read_matrix_csv(directory / "V.csv")
    D, T = meta["feature_dim"], meta["n_tasks"]
    # a single task or feature comes back from loadtxt as a row; restore D x T
    U, V = U.reshape(D, T), V.reshape(D, T)
    tr = meta["transform"]
    transform = StandardizationTransform(
        np.array(tr["feature_mean"], dtype=float).reshape(T, D),
        np.array(tr["feature_scale"], dtype=float).reshape(T, D),
        np.array(tr["target_mean"], dtype=float),
        np.array(tr["degenerate"], dtype=bool).reshape(T, D),
    )
    hp = Hyperparams(**meta["hyperparams"]) if meta.get("hyperparams") else None
    penalty = PenaltySpec.from_json(meta["penalty"]) if meta.get("penalty") else None
    return FittedModel(meta["method"], ParamState(U, V), transform, hp, penalty)


def write_trace_csv(trace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for k, v in enumerate(trace, start=1):
            w.writerow([k, _fmt(v)])
    return path


def write_predictions_csv(predictions, path) -> Path:
    """``task,y_hat`` rows, tasks in order."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "y_hat"])
        for t, p in enumerate(predictions):
            for v in p:
                w.writerow([t, _fmt(v)])
    return path
