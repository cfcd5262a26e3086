"""FISTA for the jointly-clustered multitask objective.

The smooth part is the summed squared loss over tasks; the nonsmooth part
(clustering penalty plus the two Frobenius ridges) is handled exactly by
the decoupled prox in :mod:`flextclus.prox`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .data import DatasetError, Hyperparams, MultiTaskDataset, ParamState, validate_dataset
from .prox import PenaltySpec

logger = logging.getLogger(__name__)

L_MAX = 1e30


class DivergenceError(RuntimeError):
    """The step-size search or the objective left the finite range."""


class _Stacked:
    """Tasks zero-padded into a (T, n_max, D) tensor.

    Padding rows have zero design and zero target, so they add nothing to
    the loss or the gradient.  Products run in compiled sequential loops
    rather than BLAS, so results do not depend on the BLAS thread count.
    """

    def __init__(self, dataset: MultiTaskDataset):
        T, D = dataset.n_tasks, dataset.feature_dim
        n_max = max((t.n_samples for t in dataset.tasks), default=0)
        self.X = np.zeros((T, n_max, D))
        self.y = np.zeros((T, n_max))
        for t, task in enumerate(dataset.tasks):
            n = task.n_samples
            self.X[t, :n] = task.design
            self.y[t, :n] = task.target
        self.T, self.D = T, D

    def forward(self, W: np.ndarray) -> np.ndarray:
        return _kernels.forward(self.X, np.ascontiguousarray(W))

    def pullback(self, R: np.ndarray) -> np.ndarray:
        return _kernels.pullback(self.X, R)

    def residual(self, W: np.ndarray) -> np.ndarray:
        return self.forward(W) - self.y


def _stack(dataset) -> _Stacked:
    return dataset if isinstance(dataset, _Stacked) else _Stacked(dataset)


def _check_shapes(U, V, data: _Stacked):
    if U.shape != (data.D, data.T) or V.shape != (data.D, data.T):
        raise DatasetError(
            f"parameters are {U.shape}/{V.shape}, dataset needs ({data.D}, {data.T})"
        )


def smooth_loss_and_grad(U, V, dataset) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss ``sum_t ||y_t - X_t (u_t + v_t)||^2`` and its gradients.

    Both gradient blocks equal ``2 X_t' (X_t w_t - y_t)`` column by column.
    """
    data = _stack(dataset)
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    _check_shapes(U, V, data)
    R = data.residual(U + V)
    g = 2.0 * data.pullback(R)
    return float(_kernels.sumsq(R)), g, g.copy()


def gradient_step(U_tilde, V_tilde, dataset, L: float) -> tuple[np.ndarray, np.ndarray]:
    """Forward (gradient) step ``theta_hat = theta_tilde - grad / L``."""
    if not L > 0:
        raise ValueError(f"step scale L must be positive, got {L}")
    _, gU, gV = smooth_loss_and_grad(U_tilde, V_tilde, dataset)
    return np.asarray(U_tilde) - gU / L, np.asarray(V_tilde) - gV / L


def estimate_lipschitz(dataset, n_iter: int = 50, safety: float = 1.01, seed: int = 0) -> float:
    """Power-iteration estimate of ``4 max_t lambda_max(X_t' X_t)``.

    The joint (U, V) Hessian of task t is ``2 [[A, A], [A, A]]`` with
    ``A = X_t' X_t``, whose top eigenvalue is ``4 lambda_max(A)``.
    """
    data = _stack(dataset)
    if data.X.size == 0:
        return 1.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((data.T, data.D))
    top = 0.0
    for _ in range(n_iter):
        Av = np.einsum("tnd,tn->td", data.X, np.einsum("tnd,td->tn", data.X, v))
        norms = np.sqrt(np.einsum("td,td->t", Av, Av))
        top = float(norms.max())
        if top == 0.0:
            return 1.0
        v = Av / np.where(norms > 0, norms, 1.0)[:, None]
    return max(4.0 * safety * top, 1e-12)


@dataclass
class FistaState:
    U_tilde: np.ndarray
    V_tilde: np.ndarray
    U_prev: np.ndarray
    V_prev: np.ndarray
    tau: float = 1.0
    L: float = 1.0
    k: int = 1


@dataclass
class SolveReport:
    state: ParamState
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    L: float = 1.0
    fista: Optional[FistaState] = None

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")


def _coeff_matrix(penalty: PenaltySpec, T: int) -> np.ndarray:
    return np.ascontiguousarray(np.atleast_2d(penalty.unit_coeffs(T)), dtype=float)


def backtrack_L(U_tilde, V_tilde, dataset, L_init: float, hp: Hyperparams,
                penalty: Optional[PenaltySpec] = None) -> float:
    """Smallest ``L_init * 2^m`` whose prox point satisfies the majorization

    ``f(p) <= f(t) + <grad f(t), p - t> + (L / 2) ||p - t||^2``.

    For the squared loss the left minus the first two terms on the right is
    exactly ``sum_t ||X_t (p - t)_t||^2``; the test is evaluated in that
    form to avoid cancellation between nearly equal loss values.
    """
    if not L_init > 0:
        raise ValueError("L_init must be positive")
    data = _stack(dataset)
    U_t = np.ascontiguousarray(U_tilde, dtype=float)
    V_t = np.ascontiguousarray(V_tilde, dtype=float)
    _check_shapes(U_t, V_t, data)
    penalty = penalty or PenaltySpec.uniform()
    penalty.check_convex(data.T)
    G = 2.0 * data.pullback(data.residual(U_t + V_t))
    L, *_, status = _kernels.prox_step(data.X, _coeff_matrix(penalty, data.T), hp.lambda1,
                                       hp.lambda2, hp.lambda3, U_t, V_t, G, float(L_init))
    if status:
        raise DivergenceError(f"step scale exceeded {L_MAX:g} during backtracking")
    return L


def solve(dataset, hp: Hyperparams, penalty: Optional[PenaltySpec] = None,
          init: Optional[ParamState] = None, *, L_init: Optional[float] = None,
          fast_lipschitz: bool = False, momentum: bool = True) -> SolveReport:
    """Minimize the full objective with FISTA and backtracking.

    Parameters
    ----------
    dataset : MultiTaskDataset
        Training data (standardize beforehand if desired).
    hp : Hyperparams
        Regularization weights and stopping rule: stop when the relative
        objective change ``|F_k - F_{k-1}| / max(1, F_{k-1})`` drops below
        ``hp.rel_tol`` or after ``hp.max_iters`` iterations.
    penalty : PenaltySpec, optional
        Uniform by default.
    init : ParamState, optional
        Starting point; zeros by default.
    L_init : float, optional
        Initial step scale, 1 by default.  Ignored when `fast_lipschitz`
        is set, in which case a power-iteration estimate is used.
    momentum : bool
        ``False`` runs plain proximal gradient (tau fixed at 1).

    Returns
    -------
    SolveReport
        Holds the last prox outputs ``(U_k, V_k)`` (not the extrapolated
        point), so tied entries of U are exact.
    """
    if isinstance(dataset, MultiTaskDataset):
        validate_dataset(dataset)
    data = _stack(dataset)
    penalty = penalty or PenaltySpec.uniform()
    D, T = data.D, data.T
    penalty.check_convex(T)
    if init is None:
        U0, V0 = np.zeros((D, T)), np.zeros((D, T))
    else:
        U0 = np.ascontiguousarray(init.U, dtype=float)
        V0 = np.ascontiguousarray(init.V, dtype=float)
        _check_shapes(U0, V0, data)
    if fast_lipschitz:
        L = estimate_lipschitz(data)
    else:
        L = 1.0 if L_init is None else float(L_init)
    if not L > 0:
        raise ValueError("L_init must be positive")

    trace = np.empty(hp.max_iters)
    U, V, Ut, Vt, tau, L, iters, converged, status = _kernels.fista(
        data.X, data.y, _coeff_matrix(penalty, T), hp.lambda1, hp.lambda2, hp.lambda3,
        U0, V0, L, hp.max_iters, hp.rel_tol, momentum, trace)
    if status == 1:
        raise DivergenceError(f"step scale exceeded {L_MAX:g} at iteration {iters + 1}")
    if status == 2:
        raise DivergenceError(f"objective became non-finite at iteration {iters}")
    logger.debug("solve: %d iterations, converged=%s, L=%g", iters, converged, L)
    fista_state = FistaState(Ut, Vt, U, V, tau, L, max(iters, 1))
    return SolveReport(ParamState(U, V), trace[:iters].tolist(), iters, converged, L, fista_state)


@dataclass(frozen=True)
class Prop2Violation:
    feature: int
    task_i: int
    task_j: int
    w_gap: float
    kind: str  # "should-fuse" or "should-separate"


def prop2_check(report_or_state, hp: Hyperparams, margin: float = 1e-3) -> list[Prop2Violation]:
    """Fusion/separation consistency of a (near-)optimal solution.

    A pair with ``|W_di - W_dj| < (lambda1 / lambda3) (1 - margin)`` must
    have exactly equal U entries; a pair with
    ``|W_di - W_dj| > (T - 1) (lambda1 / lambda3) (1 + margin)`` must not.
    """
    state = report_or_state.state if isinstance(report_or_state, SolveReport) else report_or_state
    if not hp.lambda3 > 0:
        raise ValueError("the fusion thresholds need lambda3 > 0")
    U, W = state.U, state.W
    D, T = U.shape
    thr = hp.lambda1 / hp.lambda3
    lo, hi = thr * (1.0 - margin), (T - 1) * thr * (1.0 + margin)
    out = []
    for d in range(D):
        for i in range(T):
            for j in range(i + 1, T):
                gap = abs(W[d, i] - W[d, j])
                if gap < lo and U[d, i] != U[d, j]:
                    out.append(Prop2Violation(d, i, j, gap, "should-fuse"))
                elif gap > hi and U[d, i] == U[d, j]:
                    out.append(Prop2Violation(d, i, j, gap, "should-separate"))
    return out
