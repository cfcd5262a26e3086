"""Command-line entry point: ``flextclus {synth,fit,bench,predict,proxcheck}``.

Every command accepts ``--config FILE`` (a JSON object keyed by option
names, e.g. ``{"scenario": "C2", "lambda1": 10}``); flags given on the
command line take precedence over the file.  Exit codes: 0 success,
1 numeric failure (divergence, nonconvex penalty, proxcheck mismatch),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import estimators as est
from . import io
from .data import DatasetError, Hyperparams
from .evalkit import extract_clusters, heatmap_svg
from .prox import PenaltySpec, NonconvexPenaltyError, WEIGHT_CAP, oracle_prox_row, prox_row, rank_coeffs, row_objective
from .solver import DivergenceError
from .synth import SCENARIOS, ScenarioSpec, generate, run_benchmark

logger = logging.getLogger("flextclus")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --- argument parsing -----------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", help="JSON file of option values; flags override it")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for independent fits (default 1); "
                        "results do not depend on it")
    p.add_argument("--out", default=out_default, help=f"output directory (default {out_default})")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flextclus",
                                     description="Feature-wise task clustering for multitask regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    _common(p, ".")
    p.add_argument("--scenario", help=f"one of {', '.join(SCENARIOS)}")
    p.add_argument("--repetition", type=int, default=0)
    p.add_argument("--D", type=int, default=30, dest="D")
    p.add_argument("--T", type=int, default=10, dest="T")
    p.add_argument("--n", type=int, default=30, help="training samples per task")
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise-variance", type=float, default=400.0)
    p.add_argument("--clusters", type=int, default=3, help="clusters per feature (CR)")
    p.add_argument("--rho", type=float, default=5.0, help="minimum level gap (CR)")

    p = sub.add_parser("fit", help="fit a model to a multi-task CSV")
    _common(p, "model")
    p.add_argument("--train", help="training multi-task CSV")
    p.add_argument("--val", help="validation CSV; when given, hyperparameters are tuned on it")
    p.add_argument("--method", default="flextclus", help=f"one of {', '.join(est.METHODS)}")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--kappa", type=float, help="ridge/pooling penalty")
    p.add_argument("--grid", type=_floats, default=list(est.DEFAULT_GRID),
                   help="comma-separated tuning grid")
    p.add_argument("--max-iters", type=int, default=10000)
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--weight-cap", type=float, default=WEIGHT_CAP)
    p.add_argument("--nonconvex", default="order-restricted", choices=("raise", "order-restricted"),
                   help="policy for nonconvex adaptive weights")

    p = sub.add_parser("bench", help="tuned benchmark over scenarios and repetitions")
    _common(p, "bench")
    p.add_argument("--scenarios", type=_names, default=["C1", "C2", "C3", "C4", "C5", "C6"])
    p.add_argument("--methods", type=_names, default=list(est.METHODS))
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--grid", type=_floats, default=list(est.DEFAULT_GRID))
    p.add_argument("--D", type=int, default=30, dest="D")
    p.add_argument("--T", type=int, default=10, dest="T")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--noise-variance", type=float, default=400.0)

    p = sub.add_parser("predict", help="apply a saved model to a multi-task CSV")
    _common(p, ".")
    p.add_argument("--model", help="model directory written by fit")
    p.add_argument("--data", help="multi-task CSV (the y column is ignored)")

    p = sub.add_parser("proxcheck", help="fuzz the row prox against the brute-force oracle")
    _common(p, ".")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-T", type=int, default=8)
    p.add_argument("--obj-tol", type=float, default=1e-9)
    p.add_argument("--sup-tol", type=float, default=1e-7)
    p.add_argument("--replay", help="rerun the instance stored in a replay file")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(config, dict):
            parser.error("config must be a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        config = {k.replace("-", "_"): v for k, v in config.items()}
        unknown = sorted(set(config) - known - {"command"})
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        config.pop("command", None)
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


# --- commands ---------------------------------------------------------------------


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs --{', --'.join(m.replace('_', '-') for m in missing)}")


def cmd_synth(args) -> int:
    _require(args, "scenario")
    if args.scenario not in SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    try:
        spec = ScenarioSpec(args.scenario, D=args.D, T=args.T, n_train=args.n, n_val=args.n_val,
                            n_test=args.n_test, noise_variance=args.noise_variance,
                            seed=args.seed, repetition=args.repetition,
                            n_clusters=args.clusters, rho=args.rho)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    splits = generate(spec)
    out = _outdir(args.out)
    files = [
        io.write_dataset_csv(splits.train, out / "train.csv"),
        io.write_dataset_csv(splits.val, out / "val.csv"),
        io.write_dataset_csv(splits.test, out / "test.csv"),
        io.write_matrix_csv(splits.truth.W_check, out / "ground_truth_W.csv"),
        io.write_matrix_csv(splits.truth.labels, out / "labels.csv", integer=True),
    ]
    manifest = {"scenario": spec.scenario, "seed": spec.seed, "repetition": spec.repetition,
                "D": spec.D, "T": spec.T, "n_train": spec.n_train,
                "files": {f.name: _sha256(f) for f in files}}
    print(json.dumps(manifest, indent=1, sort_keys=True))
    return EXIT_OK


def _fit_model(args, train):
    method = args.method
    if method not in est.METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(est.METHODS)}")
    if args.val is not None:
        val = io.read_dataset_csv(args.val)
        grid = args.grid
        if method == "ridge":
            return est.select_ridge(train, val, grid).model
        if method == "pooling":
            return est.select_pooling(train, val, grid).model
        plain = est.select_flextclus(train, val, grid, args.max_iters, args.rel_tol, args.threads)
        if method == "flextclus":
            return plain.model
        return est.select_adaptive(train, val, grid, plain, args.max_iters, args.rel_tol,
                                   args.nonconvex, args.threads).model
    if method in ("ridge", "pooling"):
        _require(args, "kappa")
        fit = est.fit_ridge if method == "ridge" else est.fit_pooling
        return fit(train, args.kappa)
    _require(args, "lambda1", "lambda2", "lambda3")
    hp = Hyperparams(args.lambda1, args.lambda2, args.lambda3, args.max_iters, args.rel_tol)
    if method == "flextclus":
        return est.fit_flextclus(train, hp)
    return est.fit_adaptive_flextclus(train, hp, weight_cap=args.weight_cap, nonconvex=args.nonconvex)


def cmd_fit(args) -> int:
    _require(args, "train")
    train = io.read_dataset_csv(args.train)
    model = _fit_model(args, train)
    out = _outdir(args.out)
    io.save_model(model, out)
    clusters = extract_clusters(model.state.U)
    io.write_matrix_csv(clusters.labels, out / "clusters.csv", integer=True)
    heatmap_svg(clusters, out / "clusters.svg", title=f"{model.method}: task clusters of U")
    trace = model.report.objective_trace if model.report is not None else []
    io.write_trace_csv(trace, out / "trace.csv")
    summary = {"method": model.method, "feature_dim": model.feature_dim, "n_tasks": model.n_tasks}
    if model.hp is not None:
        summary.update(lambda1=model.hp.lambda1, lambda2=model.hp.lambda2, lambda3=model.hp.lambda3)
    if model.report is not None:
        summary.update(iterations=model.report.iterations, converged=model.report.converged,
                       objective=model.report.final_objective)
        if not model.report.converged:
            logger.warning("stopped at max_iters=%d before reaching rel_tol", model.hp.max_iters)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    bad = [s for s in args.scenarios if s not in SCENARIOS]
    if bad:
        raise UsageError(f"unknown scenario(s) {bad}; choose from {', '.join(SCENARIOS)}")
    bad = [m for m in args.methods if m not in est.METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(est.METHODS)}")
    if args.repetitions < 1:
        raise UsageError("--repetitions must be positive")
    specs = [ScenarioSpec(s, D=args.D, T=args.T, n_train=args.n, n_val=args.n_val,
                          n_test=args.n_test, noise_variance=args.noise_variance, seed=args.seed)
             for s in args.scenarios]
    res = run_benchmark(specs, args.methods, args.repetitions, args.grid, workers=args.threads)
    out = _outdir(args.out)
    res.write_table(out / "table.csv")
    res.write_long(out / "results_long.csv")
    sys.stdout.write((out / "table.csv").read_text())
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args, "model", "data")
    model = io.load_model(args.model)
    data = io.read_dataset_csv(args.data)
    if data.feature_dim != model.feature_dim:
        raise DatasetError(f"model expects D={model.feature_dim} features, data has D={data.feature_dim}")
    if data.n_tasks > model.n_tasks:
        raise DatasetError(f"model has {model.n_tasks} tasks, data references task {data.n_tasks - 1}")
    preds = [est.predict(model, t.design, i) for i, t in enumerate(data.tasks)]
    path = io.write_predictions_csv(preds, _outdir(args.out) / "predictions.csv")
    print(path)
    return EXIT_OK


def _check_instance(u_hat, l1, l2, fault: bool) -> dict:
    T = u_hat.size
    # the fault hook doubles the shift, which the oracle must catch
    coeffs = rank_coeffs(PenaltySpec.uniform(), 2.0 * l1 if fault else l1, T)
    u = prox_row(u_hat, coeffs, l2)
    u_or = oracle_prox_row(u_hat, l1, l2)
    gap = abs(row_objective(u, u_hat, l1, l2) - row_objective(u_or, u_hat, l1, l2))
    return {"u_hat": u_hat.tolist(), "lambda1_hat": l1, "lambda2_hat": l2,
            "prox": u.tolist(), "oracle": u_or.tolist(), "objective_gap": gap,
            "sup_distance": float(np.max(np.abs(u - u_or)))}


def cmd_proxcheck(args) -> int:
    if args.replay:
        with open(args.replay) as fh:
            inst = json.load(fh)
        rec = _check_instance(np.array(inst["u_hat"], dtype=float), inst["lambda1_hat"],
                              inst["lambda2_hat"], args.inject_fault)
        ok = rec["objective_gap"] <= args.obj_tol and rec["sup_distance"] <= args.sup_tol
        print(json.dumps({"replay": args.replay, "ok": ok, "objective_gap": rec["objective_gap"],
                          "sup_distance": rec["sup_distance"]}))
        return EXIT_OK if ok else EXIT_NUMERIC
    if args.trials < 1:
        raise UsageError(f"--trials must be positive, got {args.trials}")
    if not 2 <= args.max_T <= 12:
        raise UsageError(f"--max-T must be in 2..12, got {args.max_T}")
    rng = np.random.Generator(np.random.PCG64(args.seed))
    worst_gap = worst_sup = 0.0
    for trial in range(args.trials):
        T = int(rng.integers(2, args.max_T + 1))
        u_hat = rng.uniform(-10.0, 10.0, T)
        l1, l2 = (float(v) for v in rng.uniform(0.0, 20.0, 2))
        rec = _check_instance(u_hat, l1, l2, args.inject_fault)
        worst_gap = max(worst_gap, rec["objective_gap"])
        worst_sup = max(worst_sup, rec["sup_distance"])
        if rec["objective_gap"] > args.obj_tol or rec["sup_distance"] > args.sup_tol:
            rec.update(seed=args.seed, trial=trial, T=T)
            path = _outdir(args.out) / "proxcheck_failure.json"
            path.write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
            print(f"mismatch on trial {trial} (T={T}): objective gap {rec['objective_gap']:.3e}, "
                  f"sup distance {rec['sup_distance']:.3e}; instance written to {path}",
                  file=sys.stderr)
            return EXIT_NUMERIC
    print(json.dumps({"trials": args.trials, "seed": args.seed, "max_objective_gap": worst_gap,
                      "max_sup_distance": worst_sup, "ok": True}))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "bench": cmd_bench,
            "predict": cmd_predict, "proxcheck": cmd_proxcheck}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("flextclus: error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        # compiled kernels are sequential; BLAS stays single-threaded so
        # outputs never depend on --threads
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (DivergenceError, NonconvexPenaltyError, FloatingPointError) as exc:
        print(f"flextclus: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"flextclus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
