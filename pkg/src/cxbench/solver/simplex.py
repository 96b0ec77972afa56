"""Dense bounded-variable simplex on ``A x = b, lo <= x <= hi``.

The tableau ``T = B^-1 A`` is kept explicitly. Pricing is Dantzig's rule
until a run of degenerate pivots is seen, at which point both the
entering and leaving choices switch to Bland's smallest-index rule until
the objective moves again; this rules out cycling.

Variable states: 0 basic, 1 nonbasic at lower bound, 2 nonbasic at upper.
Lower bounds must be finite; upper bounds may be ``inf``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = 0, 1, 2, 3
STATUS_NAMES = {OPTIMAL: "optimal", INFEASIBLE: "infeasible",
                UNBOUNDED: "unbounded", ITERATION_LIMIT: "iteration_limit"}

PIVOT_TOL = 1e-9
COST_TOL = 1e-9
FEAS_TOL = 1e-9
DEGENERATE_RUN = 10


@njit(cache=True)
def _pivot(T, d, r, j):
    m, N = T.shape
    piv = T[r, j]
    for k in range(N):
        T[r, k] /= piv
    T[r, j] = 1.0
    for i in range(m):
        if i == r:
            continue
        f = T[i, j]
        if f != 0.0:
            for k in range(N):
                T[i, k] -= f * T[r, k]
            T[i, j] = 0.0
    f = d[j]
    if f != 0.0:
        for k in range(N):
            d[k] -= f * T[r, k]
        d[j] = 0.0


@njit(cache=True)
def primal_loop(T, beta, basis, state, xn, lo, hi, d, max_iter):
    """Primal simplex from a primal-feasible basis. Returns (status, iterations)."""
    m, N = T.shape
    it = 0
    degenerate = 0
    bland = False
    while it < max_iter:
        j = -1
        best = COST_TOL
        for k in range(N):
            s = state[k]
            if s == 0 or lo[k] == hi[k]:
                continue
            dk = d[k]
            if s == 1 and dk < -COST_TOL:
                v = -dk
            elif s == 2 and dk > COST_TOL:
                v = dk
            else:
                continue
            if bland:
                j = k
                break
            if v > best:
                best = v
                j = k
        if j < 0:
            return OPTIMAL, it

        dirn = 1.0 if state[j] == 1 else -1.0
        tmin = np.inf
        for i in range(m):
            a = T[i, j]
            if abs(a) < PIVOT_TOL:
                continue
            b = basis[i]
            if dirn * a > 0.0:
                lim = (beta[i] - lo[b]) / (dirn * a)
            else:
                if hi[b] == np.inf:
                    continue
                lim = (hi[b] - beta[i]) / (-dirn * a)
            if lim < 0.0:
                lim = 0.0
            if lim < tmin:
                tmin = lim
        flip = hi[j] - lo[j]
        if flip <= tmin:
            if flip == np.inf:
                return UNBOUNDED, it
            for i in range(m):
                beta[i] -= dirn * flip * T[i, j]
            if state[j] == 1:
                state[j] = 2
                xn[j] = hi[j]
            else:
                state[j] = 1
                xn[j] = lo[j]
            step = flip
        else:
            r = -1
            best_a = 0.0
            for i in range(m):
                a = T[i, j]
                if abs(a) < PIVOT_TOL:
                    continue
                b = basis[i]
                if dirn * a > 0.0:
                    lim = (beta[i] - lo[b]) / (dirn * a)
                else:
                    if hi[b] == np.inf:
                        continue
                    lim = (hi[b] - beta[i]) / (-dirn * a)
                if lim < 0.0:
                    lim = 0.0
                if lim <= tmin + 1e-12:
                    if bland:
                        if r < 0 or b < basis[r]:
                            r = i
                    elif abs(a) > best_a:
                        best_a = abs(a)
                        r = i
            step = tmin
            to_upper = dirn * T[r, j] < 0.0
            for i in range(m):
                beta[i] -= dirn * step * T[i, j]
            leaving = basis[r]
            entering_value = xn[j] + dirn * step
            if to_upper:
                state[leaving] = 2
                xn[leaving] = hi[leaving]
            else:
                state[leaving] = 1
                xn[leaving] = lo[leaving]
            basis[r] = j
            state[j] = 0
            _pivot(T, d, r, j)
            beta[r] = entering_value
        if step < 1e-12:
            degenerate += 1
            if degenerate >= DEGENERATE_RUN:
                bland = True
        else:
            degenerate = 0
            bland = False
        it += 1
    return ITERATION_LIMIT, it


@njit(cache=True)
def dual_loop(T, beta, basis, state, xn, lo, hi, d, max_iter):
    """Dual simplex from a dual-feasible basis. Returns (status, iterations)."""
    m, N = T.shape
    it = 0
    degenerate = 0
    bland = False
    while it < max_iter:
        r = -1
        worst = FEAS_TOL
        for i in range(m):
            b = basis[i]
            v = lo[b] - beta[i]
            if beta[i] - hi[b] > v:
                v = beta[i] - hi[b]
            if v > FEAS_TOL:
                if bland:
                    if r < 0 or b < basis[r]:
                        r = i
                elif v > worst:
                    worst = v
                    r = i
        if r < 0:
            return OPTIMAL, it
        leaving = basis[r]
        below = beta[r] < lo[leaving]
        target = lo[leaving] if below else hi[leaving]

        j = -1
        best = np.inf
        best_a = 0.0
        for k in range(N):
            s = state[k]
            if s == 0 or lo[k] == hi[k]:
                continue
            a = T[r, k]
            if abs(a) < PIVOT_TOL:
                continue
            if below:
                ok = (s == 1 and a < 0.0) or (s == 2 and a > 0.0)
            else:
                ok = (s == 1 and a > 0.0) or (s == 2 and a < 0.0)
            if not ok:
                continue
            ratio = abs(d[k]) / abs(a)
            if ratio < best - 1e-12:
                best = ratio
                best_a = abs(a)
                j = k
            elif ratio <= best + 1e-12 and not bland and abs(a) > best_a:
                best = min(best, ratio)
                best_a = abs(a)
                j = k
        if j < 0:
            return INFEASIBLE, it

        delta = (beta[r] - target) / T[r, j]
        for i in range(m):
            beta[i] -= delta * T[i, j]
        entering_value = xn[j] + delta
        if below:
            state[leaving] = 1
            xn[leaving] = lo[leaving]
        else:
            state[leaving] = 2
            xn[leaving] = hi[leaving]
        basis[r] = j
        state[j] = 0
        _pivot(T, d, r, j)
        beta[r] = entering_value
        if best < 1e-12:
            degenerate += 1
            if degenerate >= DEGENERATE_RUN:
                bland = True
        else:
            degenerate = 0
            bland = False
        it += 1
    return ITERATION_LIMIT, it
