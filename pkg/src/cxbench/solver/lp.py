"""Linear programs: general-form API and the standard-form engine behind it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simplex as sx

RESIDUAL_TOL = 1e-7


@dataclass
class LinearProgram:
    """``min c x`` subject to ``A x (senses) rhs`` and ``lo <= x <= hi``.

    ``senses`` holds ``"<="``, ``"="`` or ``">="`` per row. Bounds may be
    infinite; they default to ``x >= 0``.
    """

    c: np.ndarray
    A: np.ndarray
    senses: list
    rhs: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = len(self.c)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        self.lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)
        m = self.A.shape[0]
        if len(self.rhs) != m or len(self.senses) != m:
            raise ValueError("rows, senses and right-hand sides disagree in length")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lo > self.hi):
            raise ValueError("a variable has lo > hi")
        bad = set(self.senses) - {"<=", "=", ">="}
        if bad:
            raise ValueError(f"unknown constraint senses {bad}")


@dataclass
class Tableau:
    """Final simplex state of a solve, reusable as a warm start."""

    T: np.ndarray
    beta: np.ndarray
    basis: np.ndarray
    state: np.ndarray
    xn: np.ndarray
    d: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    value: float = np.nan
    iterations: int = 0
    basis: np.ndarray | None = None
    state: np.ndarray | None = None
    tableau: Tableau | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class StandardForm:
    """``min c x`` with ``A x = b`` and ``lo <= x <= hi``, ``lo`` finite.

    ``slack_of_row[i]`` is the column of a slack that appears only in row
    ``i`` (with coefficient 1), or -1. Such columns seed the starting basis.
    """

    def __init__(self, A, b, c, lo, hi, slack_of_row=None):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        m, N = self.A.shape
        if not np.all(np.isfinite(self.lo)):
            raise ValueError("standard form needs finite lower bounds")
        self.slack_of_row = (np.full(m, -1) if slack_of_row is None
                             else np.asarray(slack_of_row, dtype=np.int64))
        self.max_iter = 50 * (m + N) + 1000

    @property
    def shape(self):
        return self.A.shape

    def solve(self, lo=None, hi=None, warm=None) -> LPResult:
        lo = self.lo if lo is None else np.asarray(lo, dtype=float)
        hi = self.hi if hi is None else np.asarray(hi, dtype=float)
        if np.any(lo > hi + 1e-12):
            return LPResult("infeasible")
        if isinstance(warm, Tableau):
            res = self._from_tableau(lo, hi, warm)
            if res is not None:
                return res
            warm = (warm.basis, warm.state)
        if warm is not None:
            res = self._warm(lo, hi, *warm)
            if res is not None:
                return res
        return self._cold(lo, hi)

    # -- helpers ---------------------------------------------------------
    def _finish(self, lo, hi, T, beta, basis, state, xn, iters, d=None):
        x = xn.copy()
        x[basis] = beta
        N = self.A.shape[1]
        x = x[:N]
        scale = 1.0 + np.abs(self.b).max(initial=0.0)
        resid = np.abs(self.A @ x - self.b).max(initial=0.0)
        bound_err = max(np.max(lo[:N] - x, initial=0.0), np.max(x - hi[:N], initial=0.0))
        if resid > RESIDUAL_TOL * scale or bound_err > RESIDUAL_TOL:
            return None
        x = np.clip(x, lo[:N], hi[:N])
        tab = None
        if d is not None and np.all(basis < N):
            if T.shape[1] != N:
                T, state, xn, d = (np.ascontiguousarray(T[:, :N]), state[:N].copy(),
                                   xn[:N].copy(), d[:N].copy())
            tab = Tableau(T, beta, basis, state, xn, d, lo[:N], hi[:N])
        return LPResult("optimal", x, float(self.c @ x), iters,
                        basis.copy(), state[:N].copy(), tab)

    def _dual_then_primal(self, lo, hi, T, beta, basis, state, xn, d):
        iters = 0
        lb, ub = lo[basis], hi[basis]
        if np.any(beta < lb - sx.FEAS_TOL) or np.any(beta > ub + sx.FEAS_TOL):
            nb = state != 0
            free = lo != hi
            bad_lo = nb & free & (state == 1) & (d < -sx.COST_TOL)
            bad_hi = nb & free & (state == 2) & (d > sx.COST_TOL)
            if bad_lo.any() or bad_hi.any():
                return None
            status, k = sx.dual_loop(T, beta, basis, state, xn, lo, hi, d, self.max_iter)
            iters += k
            if status == sx.INFEASIBLE:
                return LPResult("infeasible", iterations=iters)
            if status != sx.OPTIMAL:
                return None
        status, k = sx.primal_loop(T, beta, basis, state, xn, lo, hi, d, self.max_iter)
        iters += k
        if status == sx.UNBOUNDED:
            return LPResult("unbounded", iterations=iters)
        if status != sx.OPTIMAL:
            return None
        return self._finish(lo, hi, T, beta, basis, state, xn, iters, d)

    def _from_tableau(self, lo, hi, tab: Tableau):
        # continue from a previous final tableau after a change of bounds
        state = tab.state.copy()
        nb = state != 0
        xn = np.where(state == 2, hi, lo)
        xn[~nb] = 0.0
        if not np.all(np.isfinite(xn)):
            return None
        T = tab.T.copy()
        # the loops leave stale values in xn for basic columns; only
        # nonbasic columns carry a bound shift
        shift = np.flatnonzero(nb & (xn != tab.xn))
        beta = tab.beta - T[:, shift] @ (xn[shift] - tab.xn[shift])
        return self._dual_then_primal(lo, hi, T, beta, tab.basis.copy(), state, xn, tab.d.copy())

    def _warm(self, lo, hi, basis, state):
        A, b, c = self.A, self.b, self.c
        m, N = A.shape
        basis = np.array(basis, dtype=np.int64)
        if len(basis) != m or np.any(basis >= N):
            return None
        state = np.array(state, dtype=np.int8)
        state[basis] = 0
        xn = np.where(state == 2, hi, lo)
        if np.any(~np.isfinite(xn[state != 0])):
            return None
        xn[basis] = 0.0
        try:
            T = np.linalg.solve(A[:, basis], A)
            beta = np.linalg.solve(A[:, basis], b - A @ xn)
        except np.linalg.LinAlgError:
            return None
        d = c - c[basis] @ T
        return self._dual_then_primal(lo, hi, T, beta, basis, state, xn, d)

    def _cold(self, lo, hi) -> LPResult:
        A, b, c = self.A, self.b, self.c
        m, N = A.shape
        state = np.ones(N, dtype=np.int8)
        xn = lo.copy()
        r = b - A @ xn
        basis = np.empty(m, dtype=np.int64)
        beta = np.empty(m)
        coef = np.ones(m)
        art_rows = []
        for i in range(m):
            s = self.slack_of_row[i]
            if s >= 0:
                v = xn[s] + r[i] / A[i, s]
                if lo[s] - 1e-12 <= v <= hi[s] + 1e-12:
                    basis[i] = s
                    state[s] = 0
                    beta[i] = min(max(v, lo[s]), hi[s])
                    coef[i] = A[i, s]
                    continue
            art_rows.append(i)
        n_art = len(art_rows)
        A_ext = np.zeros((m, N + n_art))
        A_ext[:, :N] = A
        for k, i in enumerate(art_rows):
            sgn = 1.0 if r[i] >= 0 else -1.0
            A_ext[i, N + k] = sgn
            coef[i] = sgn
            basis[i] = N + k
            beta[i] = abs(r[i])
        lo_e = np.concatenate([lo, np.zeros(n_art)])
        hi_e = np.concatenate([hi, np.full(n_art, np.inf)])
        state = np.concatenate([state, np.zeros(n_art, dtype=np.int8)])
        xn = np.concatenate([xn, np.zeros(n_art)])
        T = A_ext / coef[:, None]
        iters = 0

        if n_art:
            c1 = np.zeros(N + n_art)
            c1[N:] = 1.0
            d = c1 - c1[basis] @ T
            status, k = sx.primal_loop(T, beta, basis, state, xn, lo_e, hi_e, d, self.max_iter)
            iters += k
            if status != sx.OPTIMAL:
                return LPResult("iteration_limit", iterations=iters)
            infeas = beta[basis >= N].sum()
            if infeas > 1e-9 * (1.0 + np.abs(b).max(initial=0.0)):
                return LPResult("infeasible", iterations=iters)
            hi_e[N:] = 0.0
            d_dummy = np.zeros(N + n_art)
            for i in np.flatnonzero(basis >= N):
                row = np.abs(T[i, :N]) * (state[:N] != 0)
                j = int(np.argmax(row))
                if row[j] < sx.PIVOT_TOL:
                    continue  # redundant row; the artificial stays basic at zero
                delta = beta[i] / T[i, j]
                beta -= delta * T[:, j]
                entering = xn[j] + delta
                leaving = basis[i]
                state[leaving] = 1
                xn[leaving] = 0.0
                basis[i] = j
                state[j] = 0
                sx._pivot(T, d_dummy, i, j)
                beta[i] = entering

        c_e = np.concatenate([c, np.zeros(n_art)])
        d = c_e - c_e[basis] @ T
        status, k = sx.primal_loop(T, beta, basis, state, xn, lo_e, hi_e, d, self.max_iter)
        iters += k
        if status == sx.UNBOUNDED:
            return LPResult("unbounded", iterations=iters)
        if status != sx.OPTIMAL:
            return LPResult("iteration_limit", iterations=iters)
        res = self._finish(lo_e, hi_e, T, beta, basis, state, xn, iters, d)
        if res is None:
            # accumulated round-off: refactor from the final basis and polish
            if np.all(basis < N):
                res = self._warm(lo, hi, basis, state[:N])
            if res is None:
                return LPResult("iteration_limit", iterations=iters)
        if np.any(basis >= N):
            res.basis = None
            res.state = None
        return res


def lp_solve(lp: LinearProgram) -> LPResult:
    """Solve a general-form LP.

    Returns status ``optimal`` (with ``x`` and ``value``), ``infeasible``
    or ``unbounded``; never raises for those outcomes.
    """
    n = len(lp.c)
    # column map: x_i = offset_i + sum_k mult_ik * y_k over standard columns y
    cols_c, cols_lo, cols_hi, mult = [], [], [], []
    offset = np.zeros(n)
    for i in range(n):
        lo, hi = lp.lo[i], lp.hi[i]
        if np.isfinite(lo):
            mult.append([(i, 1.0)])
            cols_c.append(lp.c[i]); cols_lo.append(lo); cols_hi.append(hi)
        elif np.isfinite(hi):
            mult.append([(i, -1.0)])
            cols_c.append(-lp.c[i]); cols_lo.append(-hi); cols_hi.append(np.inf)
        else:
            mult.append([(i, 1.0)])
            cols_c.append(lp.c[i]); cols_lo.append(0.0); cols_hi.append(np.inf)
            mult.append([(i, -1.0)])
            cols_c.append(-lp.c[i]); cols_lo.append(0.0); cols_hi.append(np.inf)
    n_y = len(cols_c)
    M = np.zeros((n, n_y))
    for k, entries in enumerate(mult):
        for i, s in entries:
            M[i, k] = s

    m = lp.A.shape[0]
    rows = lp.A @ M
    rhs = lp.rhs - lp.A @ offset
    flip = np.array([s == ">=" for s in lp.senses])
    rows[flip] *= -1
    rhs = np.where(flip, -rhs, rhs)
    A = np.hstack([rows, np.eye(m)])
    s_hi = np.array([0.0 if s == "=" else np.inf for s in lp.senses])
    sf = StandardForm(
        A, rhs,
        np.concatenate([cols_c, np.zeros(m)]),
        np.concatenate([cols_lo, np.zeros(m)]),
        np.concatenate([cols_hi, s_hi]),
        slack_of_row=np.arange(n_y, n_y + m),
    )
    res = sf.solve()
    if not res.optimal:
        return LPResult(res.status, iterations=res.iterations)
    x = offset + M @ res.x[:n_y]
    return LPResult("optimal", x, float(lp.c @ x), res.iterations)
