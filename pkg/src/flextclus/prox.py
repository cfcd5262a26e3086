"""Proximal operators for the decoupled (U, V) step.

The U subproblem separates over rows.  For one row it reads

    min_u ||u - u_hat||^2 + lam1 * sum_{i<j} a_ij |u_(i) - u_(j)| + lam2 ||u||^2

where u_(i) is the i-th largest entry and a_ij = 1 for the uniform
penalty.  On vectors sorted in decreasing order the penalty is linear,
``sum_i c_i u_(i)`` with ``c_i = lam1 * (sum_{j>i} a_ij - sum_{j<i} a_ji)``,
and symmetric convex penalties have order-preserving proximal maps, so the
row prox is: sort, shift by ``c / 2``, scale by ``1 / (1 + lam2)`` and
project onto the nonincreasing cone with pool-adjacent-violators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import _kernels

WEIGHT_CAP = 1e6
TIE_TOL = 1e-6
ORACLE_MAX_T = 12


class NonconvexPenaltyError(ValueError):
    """Rank-pair weights whose sorted-order coefficients are not nonincreasing."""


def pav_nonincreasing(m) -> np.ndarray:
    """Euclidean projection of `m` onto ``{u : u_1 >= u_2 >= ... >= u_T}``.

    Single left-to-right stack pass; each pooled block carries its mean.
    Adjacent blocks with equal means are pooled too, so the output's blocks
    are exactly its maximal runs of equal values.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 1:
        raise ValueError(f"expected a 1-d sequence, got shape {m.shape}")
    if m.size == 0:
        return m.copy()
    return _kernels.pav_rows(np.ascontiguousarray(m).reshape(1, -1))[0]


@dataclass(frozen=True)
class PenaltySpec:
    """Pairwise clustering penalty on the rows of U.

    ``variant="uniform"`` weighs every pair by 1 and stores nothing.
    ``variant="adaptive"`` carries ``weights`` of shape (D, T, T) whose
    entry ``[d, i, j]`` (i < j, zero elsewhere) multiplies the distance
    between the i-th and j-th largest entries of row d.

    ``nonconvex`` decides what happens when adaptive weights induce
    sorted-order coefficients that are not nonincreasing (a nonconvex
    penalty): ``"raise"`` rejects them; ``"order-restricted"`` still runs
    sort + shift + PAV, which yields the minimizer over vectors ordered
    like the prox input.
    """

    variant: Literal["uniform", "adaptive"] = "uniform"
    weights: Optional[np.ndarray] = None
    weight_cap: float = WEIGHT_CAP
    nonconvex: Literal["raise", "order-restricted"] = "raise"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("uniform", "adaptive"):
            raise ValueError(f"unknown penalty variant {self.variant!r}")
        if self.nonconvex not in ("raise", "order-restricted"):
            raise ValueError(f"unknown nonconvex policy {self.nonconvex!r}")
        if not self.weight_cap > 0:
            raise ValueError("weight_cap must be positive")
        if self.variant == "uniform":
            if self.weights is not None:
                raise ValueError("the uniform penalty carries no weights")
            return
        w = np.array(self.weights, dtype=float)
        if w.ndim != 3 or w.shape[1] != w.shape[2]:
            raise ValueError(f"adaptive weights must have shape (D, T, T), got {w.shape}")
        if not np.isfinite(w).all() or (w < 0).any():
            raise ValueError("adaptive weights must be finite and nonnegative")
        if (w > self.weight_cap).any():
            raise ValueError(f"adaptive weights exceed weight_cap={self.weight_cap}")
        w = np.triu(w, k=1)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls) -> "PenaltySpec":
        return cls()

    @classmethod
    def adaptive(cls, weights, weight_cap: float = WEIGHT_CAP,
                 nonconvex: str = "raise") -> "PenaltySpec":
        return cls("adaptive", weights, weight_cap, nonconvex)

    @property
    def is_uniform(self) -> bool:
        return self.variant == "uniform"

    def unit_coeffs(self, T: int) -> np.ndarray:
        """Sorted-order coefficients at unit scale: shape (T,) or (D, T)."""
        key = ("unit", T)
        if key not in self._cache:
            if self.is_uniform:
                c = T + 1.0 - 2.0 * np.arange(1, T + 1)
            else:
                if self.weights.shape[1] != T:
                    raise ValueError(f"penalty built for T={self.weights.shape[1]}, got T={T}")
                c = self.weights.sum(axis=2) - self.weights.sum(axis=1)
            c.flags.writeable = False
            self._cache[key] = c
        return self._cache[key]

    def nonconvex_rows(self, T: int) -> np.ndarray:
        """Indices of features whose coefficients break monotonicity."""
        c = np.atleast_2d(self.unit_coeffs(T))
        tol = 1e-12 * np.maximum(1.0, np.abs(c).max(axis=1, keepdims=True))
        return np.flatnonzero((np.diff(c, axis=1) > tol).any(axis=1))

    def check_convex(self, T: int) -> None:
        if self.is_uniform or self.nonconvex == "order-restricted":
            return
        bad = self.nonconvex_rows(T)
        if bad.size:
            raise NonconvexPenaltyError(
                f"adaptive weights give non-monotone rank coefficients on "
                f"{bad.size} feature(s), first is feature {bad[0]}"
            )

    def to_json(self) -> dict:
        out = {"variant": self.variant, "weight_cap": self.weight_cap,
               "nonconvex": self.nonconvex}
        if not self.is_uniform:
            out["weights"] = self.weights.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PenaltySpec":
        if obj["variant"] == "uniform":
            return cls(weight_cap=obj.get("weight_cap", WEIGHT_CAP),
                       nonconvex=obj.get("nonconvex", "raise"))
        return cls("adaptive", np.array(obj["weights"]), obj["weight_cap"], obj["nonconvex"])


def adaptive_weights(W, weight_cap: float = WEIGHT_CAP, tie_tol: float = TIE_TOL,
                     rescale: bool = True) -> np.ndarray:
    """Inverse-gap rank-pair weights from a reference weight matrix.

    For row d sorted in decreasing order, the pair of ranks (i, j) gets
    ``min(1 / (W_(i) - W_(j)), weight_cap)``, or the cap when the gap is
    below `tie_tol`.  With `rescale`, each row's pair weights are scaled to
    mean 1 (then clipped to the cap, which only binds for T > ~1400).
    """
    W = np.asarray(W, dtype=float)
    D, T = W.shape
    out = np.zeros((D, T, T))
    if T < 2:
        return out
    iu = np.triu_indices(T, k=1)
    z = -np.sort(-W, axis=1, kind="stable")
    gaps = z[:, iu[0]] - z[:, iu[1]]
    with np.errstate(divide="ignore"):
        alpha = np.where(gaps < tie_tol, weight_cap, np.minimum(1.0 / gaps, weight_cap))
    if rescale:
        alpha = np.minimum(alpha / alpha.mean(axis=1, keepdims=True), weight_cap)
    out[:, iu[0], iu[1]] = alpha
    return out


@dataclass(frozen=True)
class RankCoeffs:
    """Coefficients multiplying the sorted (decreasing) entries of a row."""

    c: np.ndarray
    order_restricted: bool = False

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 1:
            raise ValueError("rank coefficients must be one-dimensional")
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    def validate(self) -> None:
        c = self.c
        scale = max(1.0, float(np.abs(c).max(initial=0.0)))
        if abs(c.sum()) > 1e-9 * scale * max(1, c.size):
            raise ValueError(f"rank coefficients must sum to zero, got sum {c.sum()}")
        if not self.order_restricted and (np.diff(c) > 1e-12 * scale).any():
            raise NonconvexPenaltyError("rank coefficients must be nonincreasing")


def rank_coeffs(penalty: PenaltySpec, lambda1_hat: float, T: int, feature: int = 0) -> RankCoeffs:
    """Linear coefficients of the penalty on a decreasingly sorted row."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if lambda1_hat < 0:
        raise ValueError("lambda1_hat must be nonnegative")
    unit = penalty.unit_coeffs(T)
    c = unit if unit.ndim == 1 else unit[feature]
    coeffs = RankCoeffs(lambda1_hat * c,
                        order_restricted=penalty.nonconvex == "order-restricted")
    if lambda1_hat > 0:
        coeffs.validate()
    return coeffs


def penalty_value(U, penalty: Optional[PenaltySpec] = None) -> float:
    """Sum over rows of (weighted) pairwise absolute differences."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if penalty is None or penalty.is_uniform:
        return float(_kernels.uniform_penalty(np.ascontiguousarray(U)))
    if penalty.weights.shape[:2] != U.shape:
        raise ValueError(
            f"penalty weights are for {penalty.weights.shape[:2]}, U is {U.shape}"
        )
    z = -np.sort(-U, axis=1, kind="stable")
    diff = np.abs(z[:, :, None] - z[:, None, :])
    return float(np.sum(penalty.weights * diff))


def _prox_sorted(U_hat: np.ndarray, C: np.ndarray, lambda2_hat: float) -> np.ndarray:
    return _kernels.prox_sorted_rows(np.ascontiguousarray(U_hat), np.ascontiguousarray(C),
                                     float(lambda2_hat))


def prox_row(u_hat, coeffs: RankCoeffs, lambda2_hat: float) -> np.ndarray:
    """Exact minimizer of the single-row U subproblem.

    `coeffs` already carries the lambda1_hat scaling (see `rank_coeffs`).
    """
    u_hat = np.asarray(u_hat, dtype=float)
    if u_hat.ndim != 1 or u_hat.shape[0] != coeffs.c.shape[0]:
        raise ValueError(f"u_hat has shape {u_hat.shape}, coefficients {coeffs.c.shape}")
    if lambda2_hat < 0:
        raise ValueError("lambda2_hat must be nonnegative")
    coeffs.validate()
    if not coeffs.c.any():
        return u_hat / (1.0 + lambda2_hat)
    return _prox_sorted(u_hat.reshape(1, -1), coeffs.c.reshape(1, -1), lambda2_hat)[0]


def prox_rows(U_hat, penalty: PenaltySpec, lambda1_hat: float, lambda2_hat: float) -> np.ndarray:
    """Row-wise prox for a whole D x T matrix (the hot path of the solver)."""
    U_hat = np.asarray(U_hat, dtype=float)
    T = U_hat.shape[1]
    if lambda1_hat == 0.0 or T < 2:
        return U_hat / (1.0 + lambda2_hat)
    penalty.check_convex(T)
    C = lambda1_hat * np.atleast_2d(penalty.unit_coeffs(T))
    return _prox_sorted(U_hat, C, lambda2_hat)


def shrink_v(v_hat, lambda3_hat: float) -> np.ndarray:
    """Closed-form V update: elementwise ``v_hat / (1 + lambda3_hat)``."""
    if lambda3_hat < 0:
        raise ValueError("lambda3_hat must be nonnegative")
    return np.asarray(v_hat, dtype=float) / (1.0 + lambda3_hat)


def row_objective(u, u_hat, lambda1_hat: float, lambda2_hat: float,
                  pair_weights=None) -> float:
    """The single-row subproblem objective, evaluated pair by pair.

    `pair_weights` is an optional T x T rank-pair matrix (upper triangle
    used); None means every pair weighs 1.
    """
    u = np.asarray(u, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    T = u.shape[0]
    if pair_weights is None:
        pen = sum(abs(u[i] - u[j]) for i in range(T) for j in range(i + 1, T))
    else:
        z = sorted(u, reverse=True)
        pen = sum(pair_weights[i][j] * (z[i] - z[j])
                  for i in range(T) for j in range(i + 1, T))
    return float(np.sum((u - u_hat) ** 2) + lambda1_hat * pen + lambda2_hat * np.sum(u**2))


def oracle_prox_row(u_hat, lambda1_hat: float, lambda2_hat: float,
                    pair_weights=None) -> np.ndarray:
    """Brute-force row prox over all contiguous partitions of the sorted input.

    Intended as a test oracle: cost is ``O(2^(T-1) T^2)``, so T is capped at 12.
    For each partition the block values are the stationary point of the
    objective restricted to that block structure; the candidate with the
    smallest true objective wins.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    T = u_hat.shape[0]
    if T > ORACLE_MAX_T:
        raise ValueError(f"oracle is limited to T <= {ORACLE_MAX_T}, got {T}")
    if T == 0:
        return u_hat.copy()
    if pair_weights is None:
        A = np.triu(np.ones((T, T)), k=1)
    else:
        A = np.triu(np.asarray(pair_weights, dtype=float), k=1)
    order = sorted(range(T), key=lambda i: -u_hat[i])
    z = u_hat[order]
    # prefix sums give each block's mean and its pair-weight mass in O(1)
    zc = np.concatenate([[0.0], np.cumsum(z)])
    Ac = np.zeros((T + 1, T + 1))
    Ac[1:, 1:] = A.cumsum(axis=0).cumsum(axis=1)

    def mass(r0, r1, c0, c1):  # A[r0:r1, c0:c1].sum()
        return Ac[r1, c1] - Ac[r0, c1] - Ac[r1, c0] + Ac[r0, c0]

    iu = np.triu_indices(T, k=1)
    Au = A[iu]
    best, best_val = None, np.inf
    cand = np.empty(T)
    for mask in range(2 ** (T - 1)):
        bounds = [0] + [i + 1 for i in range(T - 1) if mask >> i & 1] + [T]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            later = mass(lo, hi, hi, T)
            earlier = mass(0, lo, lo, hi)
            s = hi - lo
            mean = (zc[hi] - zc[lo]) / s
            cand[lo:hi] = (mean - 0.5 * lambda1_hat * (later - earlier) / s) / (1 + lambda2_hat)
        # true objective; the penalty uses the candidate's own sorted order
        srt = np.sort(cand)[::-1]
        pen = float(np.dot(Au, srt[iu[0]] - srt[iu[1]]))
        val = float(np.sum((cand - z) ** 2) + lambda1_hat * pen + lambda2_hat * np.sum(cand**2))
        if val < best_val:
            best_val = val
            best = np.empty(T)
            best[order] = cand
    return best
