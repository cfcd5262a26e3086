"""Acceptance checks.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line with its measured
value and runtime, then asserts.  Run with ``pytest -m acceptance -s`` to
see only these lines, or look for them in the verbose log.
"""

import math
import time

import numpy as np
import pytest
import scipy.linalg

from flextclus.cli import main
from flextclus.data import Hyperparams, MultiTaskDataset, TaskData
from flextclus.estimators import fit_flextclus
from flextclus.evalkit import extract_clusters, row_rand_indices
from flextclus.prox import PenaltySpec, oracle_prox_row, prox_row, rank_coeffs, row_objective
from flextclus.solver import _Stacked, prop2_check, smooth_loss_and_grad, solve
from flextclus.synth import ScenarioSpec, generate, run_benchmark

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, measured, seconds):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {name}: {measured} [{seconds:.1f} s]")
    return emit


def _ridge(X, y, kappa):
    return scipy.linalg.solve(X.T @ X + kappa * np.eye(X.shape[1]), X.T @ y, assume_a="pos")


def test_1_prox_matches_oracle(report):
    rng = np.random.default_rng(20240601)
    start = time.perf_counter()
    worst_gap = worst_sup = 0.0
    for _ in range(1000):
        T = int(rng.integers(2, 9))
        u_hat = rng.uniform(-10.0, 10.0, T)
        l1, l2 = rng.uniform(0.0, 20.0, 2)
        u = prox_row(u_hat, rank_coeffs(PenaltySpec.uniform(), l1, T), l2)
        u_or = oracle_prox_row(u_hat, l1, l2)
        worst_gap = max(worst_gap, abs(row_objective(u, u_hat, l1, l2) - row_objective(u_or, u_hat, l1, l2)))
        worst_sup = max(worst_sup, float(np.max(np.abs(u - u_or))))
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-9 and worst_sup <= 1e-7 and elapsed < 10
    report(1, "prox vs oracle", ok, f"max gap {worst_gap:.2e}, max sup {worst_sup:.2e}", elapsed)
    assert worst_gap <= 1e-9 and worst_sup <= 1e-7
    assert elapsed < 10


def _reduction_instance(rng):
    D = int(rng.integers(1, 11))
    T = int(rng.integers(1, 6))
    n = int(rng.integers(max(2 * D, 4), 41))
    tasks = []
    for _ in range(T):
        X = rng.standard_normal((n, D))
        tasks.append(TaskData(X, X @ rng.standard_normal(D) + rng.standard_normal(n)))
    lam2, lam3 = rng.uniform(0.5, 5.0, 2)
    return MultiTaskDataset(tuple(tasks), D), float(lam2), float(lam3)


def test_2_zero_lambda1_reduces_to_ridge(report):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    errors = []
    for _ in range(50):
        ds, lam2, lam3 = _reduction_instance(rng)
        kappa = lam2 * lam3 / (lam2 + lam3)
        W = solve(ds, Hyperparams(0.0, lam2, lam3, max_iters=100000, rel_tol=1e-12),
                  fast_lipschitz=True).state.W
        ref = np.column_stack([_ridge(t.design, t.target, kappa) for t in ds.tasks])
        errors.append(float(np.max(np.abs(W - ref))))
    elapsed = time.perf_counter() - start
    errors = np.array(errors)
    worst = errors.max()
    ok = worst <= 1e-6 and elapsed < 30
    report(2, "lambda1=0 reduces to ridge", ok,
           f"max |W - ridge| {worst:.2e}, {int((errors > 1e-6).sum())}/50 above 1e-6", elapsed)
    assert worst <= 1e-6
    assert elapsed < 30


def test_3_zero_lambda3_degenerates_to_least_squares(report):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst_u = worst_w = 0.0
    for _ in range(20):
        D = int(rng.integers(1, 7))
        T = int(rng.integers(1, 5))
        n = int(rng.integers(2 * D + 2, 31))
        tasks = []
        for _ in range(T):
            X = rng.standard_normal((n, D))
            tasks.append(TaskData(X, X @ rng.standard_normal(D) + rng.standard_normal(n)))
        ds = MultiTaskDataset(tuple(tasks), D)
        # the property concerns the optimum, so the solver runs to its fixed point
        hp = Hyperparams(float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.5, 5.0)), 0.0,
                         max_iters=20000, rel_tol=1e-300)
        state = solve(ds, hp, fast_lipschitz=True).state
        ls = np.column_stack([np.linalg.lstsq(t.design, t.target, rcond=None)[0] for t in ds.tasks])
        worst_u = max(worst_u, float(np.max(np.abs(state.U))))
        worst_w = max(worst_w, float(np.max(np.abs(state.W - ls))))
    elapsed = time.perf_counter() - start
    ok = worst_u <= 1e-6 and worst_w <= 1e-5 and elapsed < 10
    report(3, "lambda3=0 degeneration", ok, f"max |U| {worst_u:.2e}, max |W - LS| {worst_w:.2e}", elapsed)
    assert worst_u <= 1e-6 and worst_w <= 1e-5
    assert elapsed < 10


def test_4_fusion_thresholds_hold(report):
    start = time.perf_counter()
    violations = fits = 0
    settings = [(1.0, 1.0, 1.0), (5.0, 1.0, 2.0), (20.0, 2.0, 1.0), (0.5, 0.1, 0.5)]
    for scenario in ("C1", "C2", "C3", "C5", "CR"):
        for seed, (l1, l2, l3) in enumerate(settings):
            spec = ScenarioSpec(scenario, D=8, T=6, n_train=30, seed=100 + seed,
                                noise_variance=1.0 if scenario == "CR" else 400.0)
            hp = Hyperparams(l1, l2, l3, max_iters=100000, rel_tol=1e-14)
            model = fit_flextclus(generate(spec).train, hp)
            assert model.report.converged
            fits += 1
            violations += len(prop2_check(model.report, hp, margin=1e-3))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 120
    report(4, "fusion/separation thresholds", ok, f"{violations} violations over {fits} fits", elapsed)
    assert fits == 20 and violations == 0
    assert elapsed < 120


def test_5_gradient_matches_finite_differences(report):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    h = 1e-6
    worst = 0.0
    for _ in range(20):
        D, T = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        tasks = tuple(TaskData(rng.standard_normal((n, D)), rng.standard_normal(n))
                      for n in rng.integers(1, 8, T))
        ds = MultiTaskDataset(tasks, D)
        U, V = rng.standard_normal((D, T)), rng.standard_normal((D, T))
        _, gU, gV = smooth_loss_and_grad(U, V, ds)
        for block, grad in ((0, gU), (1, gV)):
            fd = np.empty_like(grad)
            for idx in np.ndindex(grad.shape):
                E = np.zeros_like(U)
                E[idx] = h
                args_p = (U + E, V) if block == 0 else (U, V + E)
                args_m = (U - E, V) if block == 0 else (U, V - E)
                fd[idx] = (smooth_loss_and_grad(*args_p, ds)[0] - smooth_loss_and_grad(*args_m, ds)[0]) / (2 * h)
            worst = max(worst, float(np.linalg.norm(fd - grad) / max(np.linalg.norm(grad), 1e-12)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 5
    report(5, "gradient vs central differences", ok, f"max relative error {worst:.2e}", elapsed)
    assert worst <= 1e-5
    assert elapsed < 5


def test_6_exact_cluster_recovery(report):
    start = time.perf_counter()
    n, T, rho = 2000, 9, 5.0
    k3 = 1.0
    hp = Hyperparams((rho / T) * k3 * math.sqrt(n), math.sqrt(n), k3 * math.sqrt(n),
                     max_iters=20000, rel_tol=1e-10)
    perfect = rows = 0
    for seed in range(5):
        spec = ScenarioSpec("CR", D=10, T=T, n_train=n, n_val=1, n_test=1, noise_variance=1.0,
                            n_clusters=3, rho=rho, seed=seed)
        s = generate(spec)
        model = fit_flextclus(s.train, hp)
        ri = row_rand_indices(extract_clusters(model.state.U), s.truth.labels)
        perfect += int((ri == 1.0).sum())
        rows += ri.size
    elapsed = time.perf_counter() - start
    frac = perfect / rows
    ok = frac >= 0.95 and elapsed < 300
    report(6, "exact recovery of feature-wise clusters", ok,
           f"{perfect}/{rows} rows with Rand index 1 ({frac:.0%})", elapsed)
    assert frac >= 0.95
    assert elapsed < 300


def test_7_benchmark_trends(report):
    start = time.perf_counter()
    base = dict(D=30, T=10, n_train=30, n_val=100, n_test=100, noise_variance=400.0, seed=0)
    main_res = run_benchmark([ScenarioSpec(s, **base) for s in ("C1", "C2", "C3", "C5")],
                             ["ridge", "pooling", "flextclus"], repetitions=10)
    c6 = run_benchmark([ScenarioSpec("C6", **base)], ["flextclus", "adaptive"], repetitions=10)
    elapsed = time.perf_counter() - start
    m = main_res.mean
    checks = {
        "C1 |flex-ridge|<=0.05": abs(m("C1", "flextclus") - m("C1", "ridge")) <= 0.05,
        "C2 flex in [0.33,0.50]": 0.33 <= m("C2", "flextclus") <= 0.50,
        "C2 flex<=pooling": m("C2", "flextclus") <= m("C2", "pooling"),
        "C3 flex<pooling-0.1": m("C3", "flextclus") < m("C3", "pooling") - 0.1,
        "C5 flex<ridge-0.05": m("C5", "flextclus") < m("C5", "ridge") - 0.05,
        "C6 adaptive<=flex+0.02": c6.mean("C6", "adaptive") <= c6.mean("C6", "flextclus") + 0.02,
    }
    means = "; ".join(f"{s} " + " ".join(f"{meth}={m(s, meth):.3f}" for meth in main_res.methods)
                      for s in main_res.scenarios)
    means += f"; C6 flextclus={c6.mean('C6', 'flextclus'):.3f} adaptive={c6.mean('C6', 'adaptive'):.3f}"
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 1200
    report(7, "benchmark trends", ok, f"{means}; failed: {failed or 'none'}", elapsed)
    assert not failed
    assert elapsed < 1200


def _per_iteration_seconds(T, D=10, n=20, iters=30, reps=3):
    rng = np.random.default_rng(T)
    tasks = []
    for _ in range(T):
        X = rng.standard_normal((n, D))
        tasks.append(TaskData(X, X @ rng.standard_normal(D) + rng.standard_normal(n)))
    data = _Stacked(MultiTaskDataset(tuple(tasks), D))
    hp = Hyperparams(1.0, 1.0, 1.0, max_iters=iters, rel_tol=1e-300)
    solve(data, hp, L_init=1.0)  # warm the compiled kernels
    best = math.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        rep = solve(data, hp, L_init=1.0)
        best = min(best, (time.perf_counter() - t0) / rep.iterations)
    return best


def test_8_per_iteration_time_scaling(report):
    start = time.perf_counter()
    Ts = (10, 100, 1000)
    times = {T: _per_iteration_seconds(T) for T in Ts}
    ratios = []
    for a, b in zip(Ts, Ts[1:]):
        model = (b * math.log(b)) / (a * math.log(a))
        ratios.append((times[b] / times[a]) / model)
    elapsed = time.perf_counter() - start
    worst = max(ratios)
    ok = worst <= 1.5 and elapsed < 300
    measured = ", ".join(f"T={T}: {times[T] * 1e3:.3f} ms/iter" for T in Ts)
    report(8, "per-iteration time vs T log T", ok,
           f"{measured}; growth over T log T model {', '.join(f'{r:.2f}' for r in ratios)}", elapsed)
    assert worst <= 1.5
    assert elapsed < 300


def test_9_outputs_independent_of_threads(report, tmp_path, capsys):
    start = time.perf_counter()
    differ = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        assert main(["synth", "--scenario", "C6", "--seed", "3", "--threads", str(threads),
                     "--out", str(out / "data")]) == 0
        assert main(["fit", "--train", str(out / "data" / "train.csv"), "--val", str(out / "data" / "val.csv"),
                     "--method", "adaptive", "--threads", str(threads), "--out", str(out / "model")]) == 0
    capsys.readouterr()
    a, b = tmp_path / "t1", tmp_path / "t8"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    for rel in files:
        if (a / rel).read_bytes() != (b / rel).read_bytes():
            differ.append(str(rel))
    elapsed = time.perf_counter() - start
    ok = not differ and len(files) == 11
    report(9, "outputs identical for --threads 1 and 8", ok,
           f"{len(files)} files compared, {len(differ)} differ {differ or ''}".rstrip(), elapsed)
    assert len(files) == 11
    assert not differ
