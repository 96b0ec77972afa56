"""l1-minimal counterfactual search over a ReLU classifier as a mixed-integer LP.

The recourse is split as ``delta = p - q`` with ``p, q >= 0`` so the l1
objective is ``sum(p + q)`` and the input box becomes simple bounds.
Every anchor (one for a plain counterfactual, several for multiple
imputations sharing a recourse) gets its own copy of the hidden layer.
For an unstable unit with pre-activation ``a`` in ``[l, U]`` (``l < 0 < U``)
and indicator ``z``::

    u >= a,   u <= a - l (1 - z),   u <= U z,   0 <= u <= U

Units that are stable over the reachable box are substituted directly.
Validity is ``(2t - 1) * score >= margin`` per anchor.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from ..model import Classifier
from .lp import StandardForm

DEFAULT_MARGIN = 0.01
DEFAULT_NODE_LIMIT = 10**6
INT_TOL = 1e-6
PRUNE_TOL = 1e-9
# total tableau entries that open nodes may hold for warm starts (~160 MB)
TABLEAU_BUDGET = 20_000_000


@dataclass
class MiloProblem:
    clf: Classifier
    anchors: np.ndarray  # (J, n); row 0 is the reported anchor
    target: int
    margin: float = DEFAULT_MARGIN
    box_lo: np.ndarray | None = None
    box_hi: np.ndarray | None = None
    node_limit: int = DEFAULT_NODE_LIMIT
    incumbent: float = np.inf  # known upper bound on the optimum, if any

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        n = self.clf.n_inputs
        if self.anchors.shape[1] != n:
            raise ValueError(f"anchors have {self.anchors.shape[1]} features, model expects {n}")
        self.box_lo = np.zeros(n) if self.box_lo is None else np.asarray(self.box_lo, float)
        self.box_hi = np.ones(n) if self.box_hi is None else np.asarray(self.box_hi, float)
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")

    @property
    def anchor(self) -> np.ndarray:
        return self.anchors[0]


@dataclass
class MiloSolution:
    status: str  # "optimal" | "infeasible" | "gap_limit"
    x: np.ndarray | None = None  # counterfactual for anchor 0
    delta: np.ndarray | None = None
    objective: float = np.inf
    bound: float = np.inf
    nodes: int = 0

    @property
    def found(self) -> bool:
        return self.delta is not None


@dataclass
class EncodedModel:
    lp: StandardForm
    n: int
    z_cols: np.ndarray
    z_units: list  # (anchor, unit) per z column
    col_names: list
    n_rows: int
    delta_lo: np.ndarray
    delta_hi: np.ndarray
    pre_lo: np.ndarray  # (J, hidden)
    pre_hi: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def big_m_plus(self) -> np.ndarray:
        return np.maximum(self.pre_hi, 0.0)

    @property
    def big_m_minus(self) -> np.ndarray:
        return np.maximum(-self.pre_lo, 0.0)


def activation_bounds(clf: Classifier, box_lo, box_hi) -> tuple[np.ndarray, np.ndarray]:
    """Interval pre-activation bounds of every hidden unit over a box."""
    box_lo = np.asarray(box_lo, float)
    box_hi = np.asarray(box_hi, float)
    if np.any(box_lo > box_hi):
        raise ValueError("empty input box")
    Wp, Wn = np.maximum(clf.W1, 0), np.minimum(clf.W1, 0)
    return Wp @ box_lo + Wn @ box_hi + clf.b1, Wp @ box_hi + Wn @ box_lo + clf.b1


def recourse_bounds(prob: MiloProblem) -> tuple[np.ndarray, np.ndarray]:
    """Bounds on a shared recourse keeping every anchor inside the box."""
    if np.any(prob.box_lo > prob.box_hi):
        raise ValueError("empty input box")
    return (prob.box_lo - prob.anchors).max(axis=0), (prob.box_hi - prob.anchors).min(axis=0)


def encode(prob: MiloProblem) -> EncodedModel | None:
    """Build the big-M model; ``None`` when no shared recourse fits the box."""
    clf = prob.clf
    n = clf.n_inputs
    d_lo, d_hi = recourse_bounds(prob)
    if np.any(d_lo > d_hi + 1e-12):
        return None
    d_hi = np.maximum(d_hi, d_lo)
    W1, w2 = clf.W1, clf.w2
    sign = 2 * prob.target - 1

    const = prob.anchors @ W1.T + clf.b1  # pre-activation at delta = 0, (J, h)
    Wp, Wn = np.maximum(W1, 0), np.minimum(W1, 0)
    pre_lo = const + (Wp @ d_lo + Wn @ d_hi)
    pre_hi = const + (Wp @ d_hi + Wn @ d_lo)

    col_names = [f"p{i}" for i in range(n)] + [f"q{i}" for i in range(n)]
    lo = [max(v, 0.0) for v in d_lo] + [max(-v, 0.0) for v in d_hi]
    hi = [max(v, 0.0) for v in d_hi] + [max(-v, 0.0) for v in d_lo]
    rows: list[dict[int, float]] = []
    rhs: list[float] = []
    z_cols, z_units = [], []

    def delta_terms(coef: np.ndarray, scale: float, row: dict):
        for i in range(n):
            if coef[i] != 0.0:
                row[i] = row.get(i, 0.0) + scale * coef[i]
                row[n + i] = row.get(n + i, 0.0) - scale * coef[i]

    for j in range(len(prob.anchors)):
        valid = {}
        valid_rhs = sign * clf.b2 - prob.margin
        for k in range(clf.hidden):
            l, U = pre_lo[j, k], pre_hi[j, k]
            if U <= 0.0:
                continue
            if l >= 0.0:
                delta_terms(W1[k], -sign * w2[k], valid)
                valid_rhs += sign * w2[k] * const[j, k]
                continue
            u = len(col_names)
            z = u + 1
            col_names += [f"u{j}_{k}", f"z{j}_{k}"]
            lo += [0.0, 0.0]
            hi += [U, 1.0]
            z_cols.append(z)
            z_units.append((j, k))
            r1 = {u: -1.0}
            delta_terms(W1[k], 1.0, r1)
            rows.append(r1)
            rhs.append(-const[j, k])
            r2 = {u: 1.0, z: -l}
            delta_terms(W1[k], -1.0, r2)
            rows.append(r2)
            rhs.append(const[j, k] - l)
            rows.append({u: 1.0, z: -U})
            rhs.append(0.0)
            valid[u] = valid.get(u, 0.0) - sign * w2[k]
        rows.append(valid)
        rhs.append(valid_rhs)

    n_cols = len(col_names)
    m = len(rows)
    A = np.zeros((m, n_cols + m))
    for i, row in enumerate(rows):
        for col, v in row.items():
            A[i, col] = v
    A[:, n_cols:] = np.eye(m)
    c = np.zeros(n_cols + m)
    c[: 2 * n] = 1.0
    lp = StandardForm(
        A, np.array(rhs), c,
        np.concatenate([lo, np.zeros(m)]),
        np.concatenate([hi, np.full(m, np.inf)]),
        slack_of_row=np.arange(n_cols, n_cols + m),
    )
    return EncodedModel(lp, n, np.array(z_cols, dtype=np.int64), z_units, col_names, m,
                        d_lo, d_hi, pre_lo, pre_hi, {"sign": sign})


def _check(prob: MiloProblem, delta: np.ndarray, tol: float = 1e-7) -> bool:
    pts = prob.anchors + delta
    if np.any(pts < prob.box_lo - tol) or np.any(pts > prob.box_hi + tol):
        return False
    margin = (2 * prob.target - 1) * np.atleast_1d(prob.clf.score(pts))
    return bool(np.all(margin >= prob.margin - tol))


def solve_milo(prob: MiloProblem) -> MiloSolution:
    """Branch-and-bound over the activation indicators.

    Best-bound node order (ties: lowest node id), most-fractional
    branching (ties: lowest column). Each LP relaxation point is also
    checked against the exact network and kept as an incumbent when
    feasible. Children restart from the parent's final tableau (or, for
    large models, from a refactored copy of its basis).
    """
    enc = encode(prob)
    if enc is None:
        return MiloSolution("infeasible")
    sf = enc.lp
    n = enc.n
    zc = enc.z_cols
    incumbent = prob.incumbent
    best_delta = None

    zero = np.zeros(n)
    if _check(prob, zero):
        return MiloSolution("optimal", prob.anchor.copy(), zero, 0.0, 0.0, 0)

    counter = itertools.count()
    # heap entries: (bound, node id, z lower bounds, z upper bounds, warm start)
    heap = [(0.0, next(counter), np.zeros(len(zc)), np.ones(len(zc)), None)]
    nodes = 0
    while heap:
        bound, _, zlo, zhi, warm = heapq.heappop(heap)
        if bound >= incumbent - PRUNE_TOL:
            heap.clear()
            break
        if nodes >= prob.node_limit:
            heapq.heappush(heap, (bound, -1, zlo, zhi, warm))
            break
        nodes += 1
        lo = sf.lo.copy()
        hi = sf.hi.copy()
        lo[zc] = zlo
        hi[zc] = zhi
        res = sf.solve(lo, hi, warm)
        if not res.optimal or res.value >= incumbent - PRUNE_TOL:
            continue
        x = res.x
        delta = x[:n] - x[n:2 * n]
        zval = x[zc]
        frac = np.minimum(zval - np.floor(zval), np.ceil(zval) - zval)
        cost = float(np.abs(delta).sum())
        if cost < incumbent - PRUNE_TOL and _check(prob, delta):
            incumbent = cost
            best_delta = delta
        if frac.size == 0 or frac.max() <= INT_TOL:
            continue
        b = int(np.argmax(frac))  # first maximal entry
        if res.tableau is not None and res.tableau.T.size * (len(heap) + 2) <= TABLEAU_BUDGET:
            child_warm = res.tableau
        elif res.basis is not None:
            child_warm = (res.basis, res.state)
        else:
            child_warm = None
        for val in (0.0, 1.0):
            clo, chi = zlo.copy(), zhi.copy()
            clo[b] = chi[b] = val
            heapq.heappush(heap, (res.value, next(counter), clo, chi, child_warm))

    if best_delta is None and not np.isfinite(prob.incumbent):
        if heap:
            return MiloSolution("gap_limit", bound=heap[0][0], nodes=nodes)
        return MiloSolution("infeasible", nodes=nodes)
    if heap:
        lb = min(e[0] for e in heap)
        status = "gap_limit"
    else:
        lb = incumbent
        status = "optimal"
    if best_delta is None:
        # the caller's incumbent was never beaten; it stays optimal for them
        return MiloSolution(status, None, None, incumbent, lb, nodes)
    return MiloSolution(status, prob.anchor + best_delta, best_delta, incumbent, lb, nodes)


def solve_armin(clf: Classifier, completions, target: int, margin: float = DEFAULT_MARGIN,
                box_lo=None, box_hi=None, node_limit: int = DEFAULT_NODE_LIMIT) -> MiloSolution:
    """Smallest shared recourse valid for every completion.

    The returned counterfactual is ``completions[0] + delta``.
    """
    anchors = np.atleast_2d(np.asarray(completions, dtype=float))
    if len(anchors) < 1:
        raise ValueError("need at least one completion")
    prob = MiloProblem(clf, anchors, target, margin, box_lo, box_hi, node_limit)
    return solve_milo(prob)


def to_lp_text(enc: EncodedModel, name: str = "counterfactual") -> str:
    """CPLEX LP-format dump of an encoded model (slack columns folded into ``<=``)."""
    sf = enc.lp
    n_cols = len(enc.col_names)
    names = enc.col_names

    def expr(coefs):
        parts = []
        for j, v in enumerate(coefs):
            if v != 0.0:
                parts.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {names[j]}")
        s = " ".join(parts) or "0 " + names[0]
        return s[2:] if s.startswith("+ ") else s

    lines = [f"\\ {name}", "Minimize", " obj: " + expr(sf.c[:n_cols]), "Subject To"]
    for i in range(enc.n_rows):
        lines.append(f" r{i}: {expr(sf.A[i, :n_cols])} <= {sf.b[i]:.17g}")
    lines.append("Bounds")
    for j in range(n_cols):
        lines.append(f" {sf.lo[j]:.17g} <= {names[j]} <= {sf.hi[j]:.17g}")
    if len(enc.z_cols):
        lines.append("Binaries")
        lines.append(" " + " ".join(names[j] for j in enc.z_cols))
    lines.append("End")
    return "\n".join(lines) + "\n"
