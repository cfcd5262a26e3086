import numpy as np
import pytest

from conftest import random_dataset
from flextclus.data import Hyperparams, MultiTaskDataset, TaskData
from flextclus.estimators import fit_adaptive_flextclus, fit_flextclus, fit_ridge, predict
from flextclus.io import (FormatError, load_model, read_dataset_csv, read_matrix_csv, save_model,
                          write_dataset_csv, write_matrix_csv, write_predictions_csv, write_trace_csv)


def test_dataset_round_trip_is_exact(tmp_path, rng):
    ds = random_dataset(rng, D=3, T=4, n=5)
    back = read_dataset_csv(write_dataset_csv(ds, tmp_path / "d.csv"))
    assert back.n_tasks == 4 and back.feature_dim == 3
    for a, b in zip(ds.tasks, back.tasks):
        assert a.design.tobytes() == b.design.tobytes()
        assert a.target.tobytes() == b.target.tobytes()


def test_dataset_rows_may_interleave(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("task,y,x1\n1,2.0,3.0\n0,1.0,0.5\n1,4.0,5.0\n")
    ds = read_dataset_csv(p)
    assert ds.tasks[0].target.tolist() == [1.0]
    assert ds.tasks[1].design.ravel().tolist() == [3.0, 5.0]


@pytest.mark.parametrize("text, match", [
    ("y,task,x1\n0,1,2\n", "header"),
    ("task,y,x2\n0,1,2\n", "x1..x1"),
    ("task,y,x1\n0,1\n", "expected 3 fields"),
    ("task,y,x1\n0,abc,2\n", "could not convert"),
    ("task,y,x1\n-1,1,2\n", "negative task"),
    ("task,y,x1\n0,1,2\n2,1,2\n", "contiguous"),
    ("task,y,x1\n", "no samples"),
])
def test_dataset_format_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=match):
        read_dataset_csv(p)


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset_csv(tmp_path / "none.csv")
    with pytest.raises(FileNotFoundError):
        read_matrix_csv(tmp_path / "none.csv")
    with pytest.raises(FileNotFoundError, match="U.csv"):
        load_model(tmp_path)


def test_matrix_round_trip(tmp_path, rng):
    M = rng.standard_normal((3, 5))
    assert read_matrix_csv(write_matrix_csv(M, tmp_path / "m.csv")).tobytes() == M.tobytes()
    L = np.array([[0, 1, 0]])
    assert (read_matrix_csv(write_matrix_csv(L, tmp_path / "l.csv", integer=True), integer=True) == L).all()


@pytest.mark.parametrize("D, T", [(1, 1), (1, 3), (3, 1), (4, 3)])
def test_model_round_trip(tmp_path, rng, D, T):
    ds = random_dataset(rng, D=D, T=T, n=6)
    model = fit_flextclus(ds, Hyperparams(0.5, 1.0, 2.0, rel_tol=1e-8))
    back = load_model(save_model(model, tmp_path / "m"))
    assert back.method == model.method and back.hp == model.hp
    assert back.state.U.tobytes() == model.state.U.tobytes()
    assert back.state.V.tobytes() == model.state.V.tobytes()
    rows = rng.standard_normal((4, D))
    for t in range(T):
        assert predict(back, rows, t).tobytes() == predict(model, rows, t).tobytes()


def test_adaptive_and_ridge_models_round_trip(tmp_path, rng):
    ds = random_dataset(rng, D=3, T=4, n=8)
    ada = fit_adaptive_flextclus(ds, Hyperparams(0.3, 1.0, 1.0, rel_tol=1e-8))
    back = load_model(save_model(ada, tmp_path / "a"))
    assert back.penalty.to_json() == ada.penalty.to_json()
    ridge = load_model(save_model(fit_ridge(ds, 1.0), tmp_path / "r"))
    assert ridge.method == "ridge" and ridge.hp is None and ridge.penalty is None


def test_degenerate_feature_survives(tmp_path):
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    ds = MultiTaskDataset((TaskData(X, np.arange(4.0)),), 2)
    model = fit_ridge(ds, 1.0)
    back = load_model(save_model(model, tmp_path / "m"))
    assert (back.transform.degenerate == model.transform.degenerate).all()
    assert predict(back, X, 0).tobytes() == predict(model, X, 0).tobytes()


def test_trace_and_predictions(tmp_path):
    lines = write_trace_csv([3.0, 0.1], tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["iteration,objective", "1,3", "2,0.10000000000000001"]
    lines = write_predictions_csv([np.array([1.5]), np.array([2.0, -1.0])], tmp_path / "p.csv").read_text().splitlines()
    assert lines == ["task,y_hat", "0,1.5", "1,2", "1,-1"]
