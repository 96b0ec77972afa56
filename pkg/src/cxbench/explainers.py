"""Counterfactual explanation methods.

Every method maps ``(classifier, completed input x_hat, target class t)``
to an :class:`Explanation`. Search- and solver-backed methods return
``valid`` or ``infeasible``; the gradient methods (``wachter``, ``apas``)
may also return ``not_converged`` together with their best iterate.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .model import Classifier, interval_score
from .robustness import ModelSet, StabilityParams, certify, stability_score
from .solver.lp import LinearProgram, lp_solve
from .solver.milo import DEFAULT_MARGIN, DEFAULT_NODE_LIMIT, MiloProblem, solve_armin, solve_milo

VALID = "valid"
NOT_CONVERGED = "not_converged"
INFEASIBLE = "infeasible"

METHODS = ("wachter", "bls", "kdtreennce", "mce", "armin",
           "mcer", "rnce", "proplace", "stce", "apas")
ROBUST_METHODS = ("mcer", "rnce", "proplace", "stce", "apas")
NON_ROBUST_METHODS = ("bls", "mce", "wachter", "kdtreennce", "armin")


@dataclass
class Explanation:
    x_hat: np.ndarray
    x: np.ndarray | None  # the counterfactual; None when infeasible
    delta: np.ndarray | None
    target: int
    method: str
    status: str
    solve_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def has_point(self) -> bool:
        return self.x is not None


def _make(method, x_hat, t, status, x=None, info=None, t0=None) -> Explanation:
    x_hat = np.asarray(x_hat, dtype=float)
    delta = None
    if x is not None:
        x = np.asarray(x, dtype=float).copy()
        delta = x - x_hat
    elapsed = 0.0 if t0 is None else time.perf_counter() - t0
    return Explanation(x_hat.copy(), x, delta, int(t), method, status, elapsed, info or {})


def _predicts(clf: Classifier, x, t: int) -> bool:
    return clf.predict_class(x) == t


# ---------------------------------------------------------------------------
# gradient descent (wachter, apas)

@dataclass(frozen=True)
class WachterParams:
    lam: float = 0.9
    eps: float = 0.001
    lr: float = 0.01
    max_iter: int = 2000
    normalize: bool = False  # step along g / |g|_2 instead of g

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if not self.eps > 0 or not self.lr > 0:
            raise ValueError("eps and lr must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


# Trained models push scores far from zero, where the sigmoid is flat and plain
# steps stall; APAS therefore takes fixed-length steps and lets the stopping
# rule bound the cost.
APAS_DEFAULTS = WachterParams(lam=0.0, eps=0.1, lr=0.01, max_iter=2000, normalize=True)


@njit(cache=True)
def _sig(s):
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)


@njit(cache=True)
def _descend(W1, b1, w2, b2, x_hat, t, lam, eps, lr, max_iter, normalize):
    """Descent on ``lam*|x - x_hat|_1 + (1-lam)*max_m (p_m(x) - t)^2`` over ``[0,1]^n``.

    Returns ``(x, iterations, converged)``; when not converged ``x`` is the
    iterate with the lowest loss seen. With ``normalize`` each step has
    length ``lr`` in the direction of the (sub)gradient, which keeps the
    search moving where the sigmoid saturates.
    """
    P, h, n = W1.shape
    x = x_hat.copy()
    g = np.zeros(n)
    best_x = x.copy()
    best_loss = np.inf
    act = np.zeros(h)
    it = 0
    while True:
        all_ok = True
        worst = 0
        worst_v = -1.0
        worst_p = 0.0
        for m in range(P):
            s = b2[m]
            for k in range(h):
                a = b1[m, k]
                for i in range(n):
                    a += W1[m, k, i] * x[i]
                if a > 0.0:
                    s += w2[m, k] * a
            p = _sig(s)
            if t == 1:
                ok = p >= 0.5 + eps
            else:
                ok = p <= 0.5 - eps
            if not ok:
                all_ok = False
            v = (p - t) ** 2
            if v > worst_v:
                worst_v = v
                worst = m
                worst_p = p
        dist = 0.0
        for i in range(n):
            dist += abs(x[i] - x_hat[i])
        loss = lam * dist + (1.0 - lam) * worst_v
        if loss < best_loss:
            best_loss = loss
            best_x[:] = x
        if all_ok:
            return x, it, True
        if it >= max_iter:
            return best_x, it, False
        # gradient of the worst member's validity term
        for k in range(h):
            a = b1[worst, k]
            for i in range(n):
                a += W1[worst, k, i] * x[i]
            act[k] = 1.0 if a > 0.0 else 0.0
        coef = (1.0 - lam) * 2.0 * (worst_p - t) * worst_p * (1.0 - worst_p)
        norm = 0.0
        for i in range(n):
            gi = 0.0
            for k in range(h):
                gi += w2[worst, k] * act[k] * W1[worst, k, i]
            gi *= coef
            d = x[i] - x_hat[i]
            if d > 0.0:
                gi += lam
            elif d < 0.0:
                gi -= lam
            g[i] = gi
            norm += gi * gi
        scale = lr
        if normalize:
            norm = math.sqrt(norm)
            scale = lr / norm if norm > 0.0 else 0.0
        for i in range(n):
            v = x[i] - scale * g[i]
            x[i] = min(max(v, 0.0), 1.0)
        it += 1


def _stack(members):
    W1 = np.ascontiguousarray(np.stack([m.W1 for m in members]))
    b1 = np.ascontiguousarray(np.stack([m.b1 for m in members]))
    w2 = np.ascontiguousarray(np.stack([m.w2 for m in members]))
    b2 = np.array([m.b2 for m in members], dtype=float)
    return W1, b1, w2, b2


def _gradient_method(name, members, x_hat, t, p: WachterParams, t0):
    x_hat = np.asarray(x_hat, dtype=float)
    x, iters, ok = _descend(*_stack(members), x_hat, int(t), p.lam, p.eps, p.lr, p.max_iter,
                            p.normalize)
    status = VALID if ok else NOT_CONVERGED
    return _make(name, x_hat, t, status, x, {"iterations": int(iters)}, t0)


def wachter(clf: Classifier, x_hat, t: int, p: WachterParams = WachterParams()) -> Explanation:
    """Gradient descent trading l1 cost against squared probability error.

    Stops as soon as the target probability clears ``0.5 + eps``.
    """
    t0 = time.perf_counter()
    return _gradient_method("wachter", [clf], x_hat, t, p, t0)


def apas(clf: Classifier, x_hat, t: int, models: ModelSet,
         p: WachterParams = APAS_DEFAULTS) -> Explanation:
    """Descent against the worst member of a sampled model set; valid once
    every member clears the probability margin."""
    t0 = time.perf_counter()
    if len(models) < 1:
        raise ValueError("apas needs a non-empty model set")
    return _gradient_method("apas", list(models), x_hat, t, p, t0)


# ---------------------------------------------------------------------------
# training-data methods

@dataclass(frozen=True)
class Certified:
    radius: float


@dataclass(frozen=True)
class Ensemble:
    models: ModelSet = field(hash=False, compare=False)


@dataclass(frozen=True)
class Stable:
    params: StabilityParams = StabilityParams()
    seed: int = 0


class TrainingPool:
    """Training rows with per-target, per-filter pass masks computed once.

    Candidates for target ``t`` are rows the classifier predicts as ``t``.
    The stability filter scores row ``i`` with seed ``filter.seed + i`` so the
    mask does not depend on which instance is being explained.
    """

    def __init__(self, clf: Classifier, X):
        self.clf = clf
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim != 2 or len(self.X) == 0:
            raise ValueError("training pool must be a non-empty matrix")
        self.pred = np.atleast_1d(clf.predict_class(self.X))
        self._masks: dict = {}

    def mask(self, t: int, filt=None) -> np.ndarray:
        key = (t, id(filt.models) if isinstance(filt, Ensemble) else filt)
        if key not in self._masks:
            base = self.pred == t
            if filt is None:
                m = base
            elif isinstance(filt, Certified):
                m = base & np.atleast_1d(certify(self.clf, self.X, t, filt.radius))
            elif isinstance(filt, Ensemble):
                m = base & np.atleast_1d(filt.models.all_predict(self.X, t))
            elif isinstance(filt, Stable):
                sc = np.array([stability_score(self.clf, x, filt.params, filt.seed + i, t)
                               if base[i] else -np.inf for i, x in enumerate(self.X)])
                m = base & (sc >= filt.params.threshold)
            else:
                raise TypeError(f"unknown filter {filt!r}")
            self._masks[key] = m
        return self._masks[key]

    def nearest(self, x_hat, t: int, filt=None, k: int = 1) -> np.ndarray:
        """Indices of the ``k`` closest (l1) passing rows, nearest first."""
        idx = np.flatnonzero(self.mask(t, filt))
        if len(idx) == 0:
            return idx
        d = np.abs(self.X[idx] - x_hat).sum(axis=1)
        order = np.argsort(d, kind="stable")[:k]
        return idx[order]


def _pool(clf, train) -> TrainingPool:
    return train if isinstance(train, TrainingPool) else TrainingPool(clf, train)


def nnce(clf: Classifier, train, x_hat, t: int, filt=None, method: str = "nnce") -> Explanation:
    """Nearest training row (l1) predicted as ``t`` that passes ``filt``."""
    t0 = time.perf_counter()
    pool = _pool(clf, train)
    x_hat = np.asarray(x_hat, dtype=float)
    near = pool.nearest(x_hat, t, filt)
    if len(near) == 0:
        return _make(method, x_hat, t, INFEASIBLE, t0=t0)
    i = int(near[0])
    return _make(method, x_hat, t, VALID, pool.X[i], {"row": i}, t0)


def bls(clf: Classifier, train, x_hat, t: int, seed: int = 0,
        margin: float = DEFAULT_MARGIN, tol: float = 1e-6) -> Explanation:
    """Binary search on the segment from ``x_hat`` to a random training row predicted ``t``."""
    t0 = time.perf_counter()
    x_hat = np.asarray(x_hat, dtype=float)
    if _predicts(clf, x_hat, t):
        return _make("bls", x_hat, t, VALID, x_hat, {"alpha": 0.0}, t0)
    pool = _pool(clf, train)
    cand = np.flatnonzero(pool.mask(t))
    if len(cand) == 0:
        return _make("bls", x_hat, t, INFEASIBLE, t0=t0)
    row = int(cand[np.random.default_rng(seed).integers(len(cand))])
    x_plus = pool.X[row]
    sign = 2 * t - 1

    def point(a):
        return x_hat + a * (x_plus - x_hat)

    # aim for the margin, but never for more than the partner row itself offers
    need = min(margin, sign * clf.score(x_plus))

    def ok(a):
        return sign * clf.score(point(a)) >= need and _predicts(clf, point(a), t)

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return _make("bls", x_hat, t, VALID, point(hi), {"row": row, "alpha": hi}, t0)


# ---------------------------------------------------------------------------
# solver-backed methods

@dataclass(frozen=True)
class MCE:
    margin: float = DEFAULT_MARGIN


@dataclass(frozen=True)
class MCER:
    radius: float = 0.05
    margin: float = DEFAULT_MARGIN
    theta_max: float = 20.0
    tol: float = 1e-3


@dataclass(frozen=True)
class ARMIN:
    completions: tuple = ()
    margin: float = DEFAULT_MARGIN


def _from_solution(name, x_hat, t, sol, clf, t0, info=None) -> Explanation:
    info = dict(info or {})
    info.update(nodes=sol.nodes, solver_status=sol.status)
    if not sol.found:
        return _make(name, x_hat, t, INFEASIBLE, info=info, t0=t0)
    x = np.asarray(sol.x, dtype=float)
    if not _predicts(clf, x, t):
        info["reason"] = "solution failed the exact prediction check"
        return _make(name, x_hat, t, INFEASIBLE, info=info, t0=t0)
    return _make(name, x_hat, t, VALID, x, info, t0)


def _mcer(clf, x_hat, t, mode: MCER, box_lo, box_hi, node_limit):
    """Smallest margin (to ``mode.tol``) whose optimal counterfactual is certified.

    The first probe is the plain margin. The next guesses the extra margin
    from the certification deficit at the current solution, and the step
    doubles on failure. Once a passing margin is bracketed the bracket is
    bisected. Solutions at passing margins are handed to lower probes as
    incumbents: if nothing cheaper exists, the known solution is optimal there
    too.
    """
    def probe(theta, incumbent=np.inf, known=None):
        sol = solve_milo(MiloProblem(clf, x_hat, t, theta, box_lo, box_hi, node_limit, incumbent))
        if not sol.found and known is not None and sol.status == "optimal":
            sol = known
        if not sol.found:
            return None, False
        return sol, bool(certify(clf, sol.x, t, mode.radius))

    theta_lo = mode.margin
    sol, passed = probe(theta_lo)
    probes = 1
    if sol is None or passed:
        return sol, {"theta": theta_lo, "probes": probes}
    lo_b, hi_b = interval_score(clf, sol.x, mode.radius)
    step = max(-lo_b if t == 1 else hi_b, 0.0) + mode.tol
    infeasible_at = None
    while True:
        theta = min(theta_lo + step, mode.theta_max)
        if infeasible_at is not None and theta >= infeasible_at:
            theta = 0.5 * (theta_lo + infeasible_at)
        s, ok = probe(theta)
        probes += 1
        if ok:
            theta_hi, sol_hi = theta, s
            break
        if s is None:
            infeasible_at = theta
        else:
            theta_lo = theta
            step *= 2.0
        if theta_lo >= mode.theta_max or (
                infeasible_at is not None and infeasible_at - theta_lo <= mode.tol):
            return None, {"probes": probes}
    while theta_hi - theta_lo > mode.tol:
        mid = 0.5 * (theta_lo + theta_hi)
        s, ok = probe(mid, sol_hi.objective + 1e-9, sol_hi)
        probes += 1
        if ok:
            theta_hi, sol_hi = mid, s
        else:
            theta_lo = mid
    return sol_hi, {"theta": theta_hi, "probes": probes}


def milo_explain(clf: Classifier, x_hat, t: int, mode=MCE(), box_lo=None, box_hi=None,
                 node_limit: int = DEFAULT_NODE_LIMIT) -> Explanation:
    t0 = time.perf_counter()
    x_hat = np.asarray(x_hat, dtype=float)
    if isinstance(mode, MCE):
        sol = solve_milo(MiloProblem(clf, x_hat, t, mode.margin, box_lo, box_hi, node_limit))
        return _from_solution("mce", x_hat, t, sol, clf, t0)
    if isinstance(mode, ARMIN):
        comps = np.atleast_2d(np.asarray(mode.completions, dtype=float))
        if len(comps) == 0:
            comps = x_hat[None, :]
        sol = solve_armin(clf, comps, t, mode.margin, box_lo, box_hi, node_limit)
        return _from_solution("armin", comps[0], t, sol, clf, t0, {"J": len(comps)})
    if isinstance(mode, MCER):
        sol, info = _mcer(clf, x_hat, t, mode, box_lo, box_hi, node_limit)
        if sol is None:
            return _make("mcer", x_hat, t, INFEASIBLE, info=info, t0=t0)
        return _from_solution("mcer", x_hat, t, sol, clf, t0, info)
    raise TypeError(f"unknown solver mode {mode!r}")


# ---------------------------------------------------------------------------
# proplace

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def in_hull(V: np.ndarray, x) -> bool:
    """Whether ``x`` is a convex combination of the rows of ``V`` (feasibility LP)."""
    k, n = V.shape
    A = np.vstack([V.T, np.ones((1, k))])
    rhs = np.concatenate([np.asarray(x, dtype=float), [1.0]])
    res = lp_solve(LinearProgram(np.zeros(k), A, ["="] * (n + 1), rhs))
    return res.optimal


def proplace(clf: Classifier, train, x_hat, t: int, radius: float = 0.05, k: int = 10,
             steps: int = 500, step: float = 0.05, tol: float = 1e-6) -> Explanation:
    """Closest point to ``x_hat`` in the hull of certified target-class neighbours.

    Vertices are the ``k`` nearest training rows that are predicted ``t`` and
    certified at ``radius``. The l1 distance is minimised over simplex weights
    by projected subgradient steps from the nearest vertex; if the best point
    is not certified, it is pulled toward the nearest vertex by bisection
    until it is.
    """
    t0 = time.perf_counter()
    x_hat = np.asarray(x_hat, dtype=float)
    pool = _pool(clf, train)
    near = pool.nearest(x_hat, t, Certified(radius), k)
    if len(near) == 0:
        return _make("proplace", x_hat, t, INFEASIBLE, t0=t0)
    V = pool.X[near]
    info = {"vertices": len(near)}
    if certify(clf, x_hat, t, radius) and in_hull(V, x_hat):
        return _make("proplace", x_hat, t, VALID, x_hat, info, t0)

    w = np.zeros(len(V))
    w[0] = 1.0
    best = V[0].copy()
    best_d = np.abs(best - x_hat).sum()
    for _ in range(steps):
        x = w @ V
        g = V @ np.sign(x - x_hat)
        w = project_simplex(w - step * g)
        x = w @ V
        d = np.abs(x - x_hat).sum()
        if d < best_d:
            best, best_d = x, d
    if not certify(clf, best, t, radius):
        v0 = V[0]
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if certify(clf, best + mid * (v0 - best), t, radius):
                hi = mid
            else:
                lo = mid
        best = best + hi * (v0 - best)
        info["pulled"] = hi
    return _make("proplace", x_hat, t, VALID, best, info, t0)


# ---------------------------------------------------------------------------
# dispatch by method name

DEFAULT_PARAMS = {
    "wachter": {"lam": 0.9, "eps": 0.001, "lr": 0.01, "max_iter": 2000, "normalize": False},
    "bls": {"margin": DEFAULT_MARGIN},
    "kdtreennce": {},
    "mce": {"margin": DEFAULT_MARGIN, "node_limit": DEFAULT_NODE_LIMIT},
    "armin": {"margin": DEFAULT_MARGIN, "J": 5, "node_limit": DEFAULT_NODE_LIMIT},
    "mcer": {"radius": 0.05, "margin": DEFAULT_MARGIN, "theta_max": 20.0, "tol": 1e-3,
             "node_limit": DEFAULT_NODE_LIMIT},
    "rnce": {"radius": 0.05},
    "proplace": {"radius": 0.05, "k": 10, "steps": 500, "step": 0.05},
    "stce": {"filter": "stable", "noise_std": 0.05, "samples": 100, "k": 1.0,
             "threshold": 0.6, "ensemble_size": 10},
    "apas": {"P": 20, "radius": 0.05, "lam": APAS_DEFAULTS.lam, "eps": APAS_DEFAULTS.eps,
             "lr": APAS_DEFAULTS.lr, "max_iter": APAS_DEFAULTS.max_iter,
             "normalize": APAS_DEFAULTS.normalize},
}


def method_params(method: str, overrides: dict | None = None) -> dict:
    if method not in DEFAULT_PARAMS:
        raise KeyError(f"unknown method {method!r}")
    params = dict(DEFAULT_PARAMS[method])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise KeyError(f"method {method!r} has no parameter {key!r}")
        params[key] = value
    return params


@dataclass
class MethodContext:
    """Everything a method may need besides the instance: the model, its
    training pool, and lazily built model sets."""

    clf: Classifier
    pool: TrainingPool
    params: dict  # method -> parameter dict (already merged with defaults)
    seed: int = 0
    ensemble_factory: object = None  # callable(E, seed) -> ModelSet for the stce ensemble filter
    _cache: dict = field(default_factory=dict)

    def p(self, method):
        if method not in self.params:
            self.params[method] = method_params(method)
        return self.params[method]

    def apas_models(self) -> ModelSet:
        if "apas" not in self._cache:
            from .robustness import sample_models
            p = self.p("apas")
            self._cache["apas"] = sample_models(self.clf, int(p["P"]), float(p["radius"]), self.seed)
        return self._cache["apas"]

    def stce_filter(self):
        if "stce" not in self._cache:
            p = self.p("stce")
            if p["filter"] == "stable":
                sp = StabilityParams(p["noise_std"], int(p["samples"]), p["k"], p["threshold"])
                self._cache["stce"] = Stable(sp, self.seed)
            elif p["filter"] == "ensemble":
                if self.ensemble_factory is None:
                    raise ValueError("the ensemble filter needs training data to retrain on")
                self._cache["stce"] = Ensemble(self.ensemble_factory(int(p["ensemble_size"]), self.seed))
            else:
                raise ValueError(f"unknown stce filter {p['filter']!r}")
        return self._cache["stce"]


def _wachter_params(p: dict) -> WachterParams:
    return WachterParams(float(p["lam"]), float(p["eps"]), float(p["lr"]), int(p["max_iter"]),
                         bool(p["normalize"]))


def explain(method: str, ctx: MethodContext, x_hat, t: int, seed: int = 0,
            completions=None) -> Explanation:
    """Run ``method`` on one instance. ``completions`` feeds ARMIN."""
    p = ctx.p(method)
    clf = ctx.clf
    if method == "wachter":
        return wachter(clf, x_hat, t, _wachter_params(p))
    if method == "apas":
        return apas(clf, x_hat, t, ctx.apas_models(), _wachter_params(p))
    if method == "bls":
        return bls(clf, ctx.pool, x_hat, t, seed, p["margin"])
    if method == "kdtreennce":
        return nnce(clf, ctx.pool, x_hat, t, None, "kdtreennce")
    if method == "rnce":
        return nnce(clf, ctx.pool, x_hat, t, Certified(p["radius"]), "rnce")
    if method == "stce":
        return nnce(clf, ctx.pool, x_hat, t, ctx.stce_filter(), "stce")
    if method == "mce":
        return milo_explain(clf, x_hat, t, MCE(p["margin"]), node_limit=int(p["node_limit"]))
    if method == "mcer":
        mode = MCER(p["radius"], p["margin"], p["theta_max"], p["tol"])
        return milo_explain(clf, x_hat, t, mode, node_limit=int(p["node_limit"]))
    if method == "armin":
        comps = [np.asarray(x_hat, dtype=float)] if completions is None else completions
        return milo_explain(clf, x_hat, t, ARMIN(tuple(map(tuple, comps)), p["margin"]),
                            node_limit=int(p["node_limit"]))
    if method == "proplace":
        return proplace(clf, ctx.pool, x_hat, t, p["radius"], int(p["k"]), int(p["steps"]), p["step"])
    raise KeyError(f"unknown method {method!r}")
