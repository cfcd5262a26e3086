"""Synthetic multitask regression scenarios with known task-cluster structure.

Random streams
--------------
Every draw comes from numpy's PCG64 generator (a permuted LCG, no shift
register).  Streams are addressed by a ``SeedSequence`` spawn key
``(scenario_index, repetition, stream)``: stream 0 draws the weights and
group structure, stream ``t + 1`` draws task t's inputs and noise (train,
then validation, then test).  Gaussians use the Marsaglia polar method on
the generator's 53-bit uniforms, so a (scenario, seed, repetition) triple
fixes the data regardless of platform or of how tasks are scheduled.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import MultiTaskDataset, TaskData
from .evalkit import relabel_rows

logger = logging.getLogger(__name__)

SCENARIOS = ("C1", "C2", "C3", "C4", "C5", "C6", "CR")


class Stream:
    """PCG64 substream with polar-method normals."""

    def __init__(self, seed: int, key: tuple[int, ...]):
        ss = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        # ranks of uniforms; avoids depending on Generator.permutation internals
        return np.argsort(self.uniform(n), kind="stable")

    def normal(self, size=(), mean=0.0, var=1.0) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        out = np.empty(n)
        filled = 0
        while filled < n:
            pairs = (n - filled) // 2 + 1
            u = 2.0 * self.uniform((pairs, 2)) - 1.0
            s = u[:, 0] ** 2 + u[:, 1] ** 2
            ok = (s > 0.0) & (s < 1.0)
            u, s = u[ok], s[ok]
            z = (u * np.sqrt(-2.0 * np.log(s) / s)[:, None]).ravel()
            take = min(n - filled, z.size)
            out[filled:filled + take] = z[:take]
            filled += take
        return mean + np.sqrt(var) * out.reshape(shape)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    D: int = 30
    T: int = 10
    n_train: int = 30
    n_val: int = 100
    n_test: int = 100
    noise_variance: float = 400.0
    seed: int = 0
    repetition: int = 0
    n_clusters: int = 3
    rho: float = 5.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if min(self.D, self.T, self.n_train) < 1 or min(self.n_val, self.n_test) < 0:
            raise ValueError("sizes must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")
        if self.scenario == "C4" and self.T < 3:
            raise ValueError("C4 needs at least 3 tasks")
        if self.scenario == "C5" and self.T < 2:
            raise ValueError("C5 needs at least 2 tasks")
        if self.scenario == "C6" and self.D < 3:
            raise ValueError("C6 needs at least 3 features")
        if self.scenario == "CR":
            if not self.rho > 0:
                raise ValueError("CR requires rho > 0")
            if not 1 <= self.n_clusters <= self.T:
                raise ValueError("CR needs 1 <= n_clusters <= T")


@dataclass(frozen=True)
class GroundTruth:
    W_check: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class Splits:
    train: MultiTaskDataset
    val: MultiTaskDataset
    test: MultiTaskDataset
    truth: GroundTruth


def _weights(spec: ScenarioSpec, rng: Stream) -> tuple[np.ndarray, np.ndarray]:
    D, T = spec.D, spec.T
    s = spec.scenario
    groups = np.zeros((D, T), dtype=int)
    if s == "C1":
        W = rng.normal((D, T), var=25.0)
        groups[:] = np.arange(T)
    elif s in ("C2", "C3"):
        w_m = rng.normal(D, var=25.0)
        W = w_m[:, None] + rng.normal((D, T))
        if s == "C3":
            for d in range(D):
                t = int(rng.integers(0, T))
                W[d, t] = float(rng.normal((), mean=10.0, var=100.0))
                groups[d, t] = 1
    elif s == "C4":
        w_m = rng.normal(D, var=25.0)
        n_out = 2
        W = w_m[:, None] + rng.normal((D, T))
        W[:, T - n_out:] = rng.normal((D, n_out), mean=10.0, var=100.0)
        groups[:, T - n_out:] = np.arange(1, n_out + 1)
    elif s == "C5":
        w1 = rng.normal(D, var=25.0)
        w2 = rng.normal(D, var=100.0)
        W = np.empty((D, T))
        for d in range(D):
            size1 = int(rng.integers(1, T))  # 1 .. T-1 tasks in group 1
            members = rng.permutation(T)[:size1]
            g = np.ones(T, dtype=int)
            g[members] = 0
            groups[d] = g
            W[d] = np.where(g == 0, w1[d], w2[d]) + rng.normal(T)
    elif s == "C6":
        w_m = rng.normal(D, var=25.0)
        W = w_m[:, None] + rng.normal((D, T))
        W[D - 2:] = rng.normal((2, T), mean=10.0, var=100.0)
        groups[D - 2:] = np.arange(T)
    else:  # CR
        k = spec.n_clusters
        W = np.empty((D, T))
        for d in range(D):
            gaps = spec.rho * (1.0 + 0.5 * rng.uniform(k - 1))
            levels = np.concatenate([[0.0], np.cumsum(gaps)])
            levels -= levels.mean()
            levels = levels[rng.permutation(k)]
            perm = rng.permutation(T)
            g = np.empty(T, dtype=int)
            g[perm[:k]] = np.arange(k)
            g[perm[k:]] = rng.integers(0, k, size=T - k)
            groups[d] = g
            W[d] = levels[g]
    return W, relabel_rows(groups)


def generate(spec: ScenarioSpec) -> Splits:
    """Draw train/validation/test datasets and the generating structure."""
    sid = SCENARIOS.index(spec.scenario)
    W, labels = _weights(spec, Stream(spec.seed, (sid, spec.repetition, 0)))
    sizes = (spec.n_train, spec.n_val, spec.n_test)
    parts: list[list[TaskData]] = [[], [], []]
    for t in range(spec.T):
        rng = Stream(spec.seed, (sid, spec.repetition, t + 1))
        for part, n in zip(parts, sizes):
            X = rng.normal((n, spec.D))
            y = X @ W[:, t] + rng.normal(n, var=spec.noise_variance)
            part.append(TaskData(X, y))
    train, val, test = (MultiTaskDataset(tuple(p), spec.D) for p in parts)
    W.flags.writeable = False
    labels.flags.writeable = False
    return Splits(train, val, test, GroundTruth(W, labels))


# --- benchmark -------------------------------------------------------------------


@dataclass
class BenchmarkResult:
    scenarios: list[str]
    methods: list[str]
    scores: dict = field(default_factory=dict)  # (scenario, method) -> list of test NMSE
    params: dict = field(default_factory=dict)  # (scenario, method) -> list of selected params

    def mean(self, scenario: str, method: str) -> float:
        return float(np.mean(self.scores[scenario, method]))

    def std(self, scenario: str, method: str) -> float:
        v = self.scores[scenario, method]
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def ranks(self, scenario: str) -> dict[str, int]:
        order = sorted(self.methods, key=lambda m: (self.mean(scenario, m), self.methods.index(m)))
        return {m: i + 1 for i, m in enumerate(order)}

    def write_table(self, path) -> None:
        """Scenario rows x method columns, cells ``mean±std [rank]``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", *self.methods])
            for s in self.scenarios:
                r = self.ranks(s)
                w.writerow([s, *(f"{self.mean(s, m):.3f}±{self.std(s, m):.3f} [{r[m]}]"
                                 for m in self.methods)])

    def write_long(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "method", "repetition", "test_nmse", "params"])
            for s in self.scenarios:
                for m in self.methods:
                    for rep, (v, p) in enumerate(zip(self.scores[s, m], self.params[s, m])):
                        pstr = ";".join(f"{k}={p[k]:.17g}" for k in sorted(p))
                        w.writerow([s, m, rep, f"{v:.17g}", pstr])


def run_repetition(spec: ScenarioSpec, methods: Sequence[str], grid=None) -> dict:
    """Tune every method on the validation split of one draw; return test NMSE."""
    from . import estimators as est

    grid = est.DEFAULT_GRID if grid is None else tuple(grid)
    splits = generate(spec)
    out = {}
    plain = None
    for m in methods:
        if m == "ridge":
            sel = est.select_ridge(splits.train, splits.val, grid)
        elif m == "pooling":
            sel = est.select_pooling(splits.train, splits.val, grid)
        elif m == "flextclus":
            sel = plain = est.select_flextclus(splits.train, splits.val, grid)
        elif m == "adaptive":
            if plain is None:
                plain = est.select_flextclus(splits.train, splits.val, grid)
            sel = est.select_adaptive(splits.train, splits.val, grid, stage1=plain)
        else:
            raise ValueError(f"unknown method {m!r}; choose from {est.METHODS}")
        out[m] = (est.dataset_nmse(sel.model, splits.test), sel.params)
    return out


def _run_job(args):
    spec, methods, grid = args
    return run_repetition(spec, methods, grid)


def run_benchmark(specs: Sequence[ScenarioSpec], methods: Sequence[str],
                  repetitions: int = 10, grid=None, workers: int = 1) -> BenchmarkResult:
    """Mean and spread of test NMSE over repetitions for each scenario and method.

    Repetition r of a scenario uses ``replace(spec, repetition=r)``; jobs
    are independent, so running them on several worker processes gives
    the same table as running them sequentially.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    methods = list(methods)
    jobs = [(replace(spec, repetition=r), methods, grid) for spec in specs for r in range(repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_job, jobs))
    else:
        outputs = [_run_job(j) for j in jobs]
    res = BenchmarkResult([s.scenario for s in specs], methods)
    for (spec, _, _), out in zip(jobs, outputs):
        for m in methods:
            res.scores.setdefault((spec.scenario, m), []).append(out[m][0])
            res.params.setdefault((spec.scenario, m), []).append(out[m][1])
        logger.info("%s rep %d: %s", spec.scenario, spec.repetition,
                    {m: round(out[m][0], 4) for m in methods})
    return res
