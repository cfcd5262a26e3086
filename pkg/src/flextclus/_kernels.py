"""Compiled inner loops.

No fastmath: reductions keep their sequential order, so results are
bitwise reproducible and independent of any thread pool.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def pav_rows(M):
    R, T = M.shape
    out = np.empty_like(M)
    sums = np.empty(T)
    counts = np.empty(T, dtype=np.int64)
    for r in range(R):
        _pav_into(M[r], out[r], sums, counts)
    return out


@numba.njit(cache=True)
def _pav_into(m, out, sums, counts):
    T = m.shape[0]
    nb = 0
    for i in range(T):
        s = m[i]
        c = 1
        # pool while the previous block mean does not exceed the current one
        while nb > 0 and sums[nb - 1] / counts[nb - 1] <= s / c:
            nb -= 1
            s += sums[nb]
            c += counts[nb]
        sums[nb] = s
        counts[nb] = c
        nb += 1
    pos = 0
    for b in range(nb):
        v = sums[b] / counts[b]
        for _ in range(counts[b]):
            out[pos] = v
            pos += 1


@numba.njit(cache=True)
def prox_sorted_rows(U_hat, C, lam2):
    """Sort each row decreasingly (stable), shift by C/2, scale, PAV, unsort.

    C has one row per row of U_hat, or a single row shared by all.
    """
    R, T = U_hat.shape
    out = np.empty_like(U_hat)
    m = np.empty(T)
    p = np.empty(T)
    sums = np.empty(T)
    counts = np.empty(T, dtype=np.int64)
    shared = C.shape[0] == 1
    inv = 1.0 / (1.0 + lam2)
    for r in range(R):
        row = U_hat[r]
        order = np.argsort(-row, kind="mergesort")
        cr = C[0] if shared else C[r]
        for i in range(T):
            m[i] = (row[order[i]] - 0.5 * cr[i]) * inv
        _pav_into(m, p, sums, counts)
        for i in range(T):
            out[r, order[i]] = p[i]
    return out


@numba.njit(cache=True)
def uniform_penalty(U):
    """sum_d sum_{i<j} |U_di - U_dj| via the sorted identity."""
    R, T = U.shape
    total = 0.0
    for r in range(R):
        z = np.sort(U[r])  # increasing: coefficient of z[k] is 2k + 1 - T
        for k in range(T):
            total += (2.0 * k + 1.0 - T) * z[k]
    return total


@numba.njit(cache=True)
def forward(X, W):
    """out[t, i] = X[t, i, :] @ W[:, t]."""
    T, n, D = X.shape
    out = np.empty((T, n))
    for t in range(T):
        for i in range(n):
            s = 0.0
            for d in range(D):
                s += X[t, i, d] * W[d, t]
            out[t, i] = s
    return out


@numba.njit(cache=True)
def pullback(X, R):
    """out[d, t] = X[t, :, d] @ R[t, :]."""
    T, n, D = X.shape
    out = np.zeros((D, T))
    for t in range(T):
        for i in range(n):
            r = R[t, i]
            if r != 0.0:
                for d in range(D):
                    out[d, t] += X[t, i, d] * r
    return out


@numba.njit(cache=True)
def sumsq(A):
    s = 0.0
    for v in A.ravel():
        s += v * v
    return s


@numba.njit(cache=True)
def sorted_penalty(U, C):
    """sum_r sum_i C[r, i] * (i-th largest entry of U[r]); C may have one shared row."""
    R, T = U.shape
    shared = C.shape[0] == 1
    total = 0.0
    for r in range(R):
        z = np.sort(U[r])
        cr = C[0] if shared else C[r]
        for i in range(T):
            total += cr[i] * z[T - 1 - i]
    return total


@numba.njit(cache=True)
def _prox_into(U_hat, C, l1, l2, out, m, p, sums, counts):
    """Row prox of U_hat into `out`; returns the unit-scale penalty of `out`."""
    R, T = U_hat.shape
    inv = 1.0 / (1.0 + l2)
    if l1 == 0.0 or T < 2:
        for r in range(R):
            for i in range(T):
                out[r, i] = U_hat[r, i] * inv
        return sorted_penalty(out, C)
    shared = C.shape[0] == 1
    pen = 0.0
    for r in range(R):
        row = U_hat[r]
        order = np.argsort(-row, kind="mergesort")
        cr = C[0] if shared else C[r]
        for i in range(T):
            m[i] = (row[order[i]] - 0.5 * l1 * cr[i]) * inv
        _pav_into(m, p, sums, counts)
        for i in range(T):
            out[r, order[i]] = p[i]
            pen += cr[i] * p[i]
    return pen


@numba.njit(cache=True)
def prox_step(X, C, lam1, lam2, lam3, Ut, Vt, G, L):
    """Backtracking prox-gradient step from (Ut, Vt) with loss gradient G.

    Doubles L until sum_t ||X_t dW_t||^2 <= (L / 2) ||(dU, dV)||^2, which
    for a quadratic loss is exactly the majorization condition.
    Returns (L, U, V, X dW, unit penalty of U, status); status 1 means L
    overflowed.
    """
    D, T = Ut.shape
    Up = np.empty((D, T))
    Vp = np.empty((D, T))
    Uh = np.empty((D, T))
    dW = np.empty((D, T))
    m = np.empty(T)
    p = np.empty(T)
    sums = np.empty(T)
    counts = np.empty(T, dtype=np.int64)
    while True:
        for d in range(D):
            for t in range(T):
                Uh[d, t] = Ut[d, t] - G[d, t] / L
        pen = _prox_into(Uh, C, 2.0 * lam1 / L, 2.0 * lam2 / L, Up, m, p, sums, counts)
        inv3 = 1.0 / (1.0 + 2.0 * lam3 / L)
        dsq = 0.0
        for d in range(D):
            for t in range(T):
                Vp[d, t] = (Vt[d, t] - G[d, t] / L) * inv3
                du = Up[d, t] - Ut[d, t]
                dv = Vp[d, t] - Vt[d, t]
                dsq += du * du + dv * dv
                dW[d, t] = du + dv
        XdW = forward(X, dW)
        lhs = sumsq(XdW)
        if lhs <= 0.5 * L * dsq * (1.0 + 1e-12) or lhs == 0.0:
            return L, Up, Vp, XdW, pen, 0
        L *= 2.0
        if L > 1e30 or not np.isfinite(lhs):
            return L, Up, Vp, XdW, pen, 1


@numba.njit(cache=True)
def objective_change(X, C, lam1, lam2, lam3, U1, V1, U0, V0, R1, R0):
    """F(U1, V1) - F(U0, V0) without cancellation between the two values.

    R1, R0 are the residuals at the two points.  Every term is written as
    (difference) x (sum), with the difference formed from the iterates.
    """
    D, T = U1.shape
    dU = U1 - U0
    dV = V1 - V0
    dR = forward(X, dU + dV)
    loss = 0.0
    for t in range(R1.shape[0]):
        for i in range(R1.shape[1]):
            loss += dR[t, i] * (R1[t, i] + R0[t, i])
    ridge_u = 0.0
    ridge_v = 0.0
    for d in range(D):
        for t in range(T):
            ridge_u += dU[d, t] * (U1[d, t] + U0[d, t])
            ridge_v += dV[d, t] * (V1[d, t] + V0[d, t])
    pen = 0.0
    if lam1 != 0.0:
        shared = C.shape[0] == 1
        for r in range(D):
            z1 = np.sort(U1[r])
            z0 = np.sort(U0[r])
            cr = C[0] if shared else C[r]
            for i in range(T):
                pen += cr[i] * (z1[T - 1 - i] - z0[T - 1 - i])
    return loss + lam1 * pen + lam2 * ridge_u + lam3 * ridge_v


@numba.njit(cache=True)
def fista(X, y, C, lam1, lam2, lam3, U0, V0, L0, max_iters, rel_tol, momentum, trace):
    """Accelerated proximal gradient from (U0, V0).

    Writes the objective at each prox output into `trace` and returns
    (U_k, V_k, U_tilde, V_tilde, tau, L, iterations, converged, status)
    with status 0 ok, 1 step-scale overflow, 2 non-finite objective.
    """
    D, T = U0.shape
    Up, Vp = U0.copy(), V0.copy()
    Uprev, Vprev = U0.copy(), V0.copy()
    Ut, Vt = U0.copy(), V0.copy()
    W = U0 + V0
    R = forward(X, W) - y
    Rprev = R
    obj_prev = sumsq(R) + lam1 * sorted_penalty(U0, C) + lam2 * sumsq(U0) + lam3 * sumsq(V0)
    L = L0
    tau = 1.0
    iters = 0
    converged = False
    status = 0
    for k in range(max_iters):
        G = 2.0 * pullback(X, R)
        L, Up, Vp, XdW, pen, status = prox_step(X, C, lam1, lam2, lam3, Ut, Vt, G, L)
        if status != 0:
            break
        Rp = R + XdW
        obj = sumsq(Rp) + lam1 * pen + lam2 * sumsq(Up) + lam3 * sumsq(Vp)
        iters = k + 1
        if not np.isfinite(obj):
            status = 2
            break
        trace[k] = obj
        scale = max(1.0, obj_prev)
        change = obj - obj_prev
        if abs(change) < 1e-8 * scale:
            # near convergence the difference of two rounded objectives is
            # mostly rounding error; recompute it from the step itself
            change = objective_change(X, C, lam1, lam2, lam3, Up, Vp, Uprev, Vprev, Rp, Rprev)
        if abs(change) / scale < rel_tol:
            converged = True
            break
        obj_prev = obj
        Rprev = Rp
        beta = 0.0
        if momentum:
            tau_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tau * tau))
            beta = (tau - 1.0) / tau_next
            tau = tau_next
        Ut = Up + beta * (Up - Uprev)
        Vt = Vp + beta * (Vp - Vprev)
        Uprev, Vprev = Up, Vp
        R = forward(X, Ut + Vt) - y
    return Up, Vp, Ut, Vt, tau, L, iters, converged, status
