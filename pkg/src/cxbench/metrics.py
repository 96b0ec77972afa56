"""Batch metrics for counterfactual explanations, local outlier factor, and
the two-sided Mann-Whitney U test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .explainers import Explanation
from .model import Classifier

DENSITY_CAP = 1e12
EXACT_MAX_N = 12


def _check_batch(*seqs):
    n = len(seqs[0])
    if n == 0:
        raise ValueError("empty batch")
    if any(len(s) != n for s in seqs):
        raise ValueError("batch sequences differ in length")
    return n


def _targets(explanations, targets):
    return [e.target for e in explanations] if targets is None else list(targets)


def vcx(clf: Classifier, explanations: list[Explanation], targets=None) -> float:
    """Fraction of counterfactuals classified as their target.

    Explanations without a point (infeasible) count as failures; a
    not-converged iterate is judged by its actual prediction.
    """
    targets = _targets(explanations, targets)
    n = _check_batch(explanations, targets)
    hits = sum(e.x is not None and clf.predict_class(e.x) == t
               for e, t in zip(explanations, targets))
    return hits / n


def apply_recourse(x, delta) -> tuple[np.ndarray, bool]:
    """``clip(x + delta)`` to the unit box, and whether clipping changed anything."""
    raw = np.asarray(x, dtype=float) + delta
    out = np.clip(raw, 0.0, 1.0)
    return out, bool(np.any(out != raw))


def vrc_detail(clf: Classifier, true_inputs, explanations, targets=None) -> tuple[float, int]:
    """Recourse validity and the number of recourses that needed clipping."""
    targets = _targets(explanations, targets)
    n = _check_batch(true_inputs, explanations, targets)
    hits = clipped = 0
    for x, e, t in zip(true_inputs, explanations, targets):
        if e.delta is None:
            continue
        moved, was_clipped = apply_recourse(x, e.delta)
        clipped += was_clipped
        hits += clf.predict_class(moved) == t
    return hits / n, clipped


def vrc(clf: Classifier, true_inputs, explanations, targets=None) -> float:
    """Fraction of recourses that reach the target when applied to the true input."""
    return vrc_detail(clf, true_inputs, explanations, targets)[0]


def cost(true_inputs, explanations) -> tuple[float, float]:
    """Mean and population std of ``|x' - x|_1`` against the true inputs.

    Only explanations that carry a point contribute; with none, both are NaN.
    """
    _check_batch(true_inputs, explanations)
    d = [float(np.abs(e.x - np.asarray(x, dtype=float)).sum())
         for x, e in zip(true_inputs, explanations) if e.x is not None]
    if not d:
        return math.nan, math.nan
    return float(np.mean(d)), float(np.std(d))


def recourse_l1(explanations) -> float:
    """Mean ``|delta|_1 = |x' - x_hat|_1``, the size of the suggested change.

    This is what the optimizing methods minimize; :func:`cost` instead
    measures against the true input. NaN when no explanation has a point.
    """
    d = [float(np.abs(e.delta).sum()) for e in explanations if e.delta is not None]
    return float(np.mean(d)) if d else math.nan


def _distances(A, B) -> np.ndarray:
    """Euclidean distances between rows, from explicit differences."""
    return np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))


class LOF:
    """Local outlier factor of query points against a fixed reference set.

    Neighbourhoods are tie-inclusive: every reference point within the
    k-distance belongs to it. Queries are never part of the reference set.
    Local reachability densities are capped at ``DENSITY_CAP`` when all
    neighbours coincide. :meth:`score` returns the negated factor, so
    inliers sit near -1 and outliers lower.
    """

    def __init__(self, reference, k: int | None = None):
        R = np.asarray(reference, dtype=float)
        if R.ndim != 2 or len(R) < 2:
            raise ValueError("LOF needs at least two reference rows")
        self.k = min(20, len(R) - 1) if k is None else int(k)
        if not 1 <= self.k < len(R):
            raise ValueError(f"k={self.k} must be between 1 and {len(R) - 1}")
        self.R = R
        n = len(R)
        kdist = np.empty(n)
        neigh = []
        chunk = max(1, 2_000_000 // (n * R.shape[1]))
        for start in range(0, n, chunk):
            D = _distances(R[start:start + chunk], R)
            for r, row in enumerate(D):
                row[start + r] = np.inf
                kd = np.partition(row, self.k - 1)[self.k - 1]
                kdist[start + r] = kd
                nb = np.flatnonzero(row <= kd)
                neigh.append((nb, row[nb]))
        self.kdist = kdist
        self.lrd = np.empty(n)
        for i, (nb, d) in enumerate(neigh):
            self.lrd[i] = _density(np.maximum(kdist[nb], d).mean())

    def factor(self, q) -> float:
        q = np.asarray(q, dtype=float)
        d = _distances(q[None, :], self.R)[0]
        kd = np.partition(d, self.k - 1)[self.k - 1]
        nb = np.flatnonzero(d <= kd)
        lrd_q = _density(np.maximum(self.kdist[nb], d[nb]).mean())
        return float(np.mean(self.lrd[nb]) / lrd_q)

    def score(self, q) -> float:
        return -self.factor(q)


def _density(mean_reach: float) -> float:
    return DENSITY_CAP if mean_reach <= 1.0 / DENSITY_CAP else 1.0 / mean_reach


def lof_scores(lof: LOF, explanations) -> tuple[float, float]:
    vals = [lof.score(e.x) for e in explanations if e.x is not None]
    if not vals:
        return math.nan, math.nan
    return float(np.mean(vals)), float(np.std(vals))


# ---------------------------------------------------------------------------
# Mann-Whitney U

def _midranks(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sv = values[order]
    ties = []
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        ties.append(j - i + 1)
        i = j + 1
    return ranks, np.array(ties)


def u_distribution(n1: int, n2: int) -> np.ndarray:
    """Counts of rank arrangements giving each U in ``0..n1*n2`` (no ties)."""
    # f[i][j] holds the count array for samples of size i and j
    f = [[None] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(n1 + 1):
        for j in range(n2 + 1):
            c = np.zeros(i * j + 1, dtype=np.int64)
            if i == 0 or j == 0:
                c[0] = 1
            else:
                # largest value belongs to sample 1 (adds j to U) or sample 2
                a = f[i - 1][j]
                c[j:j + len(a)] += a
                b = f[i][j - 1]
                c[:len(b)] += b
            f[i][j] = c
    return f[n1][n2]


def mann_whitney_u(a, b, method: str = "auto") -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns ``(U_a, p)``.

    ``U_a`` counts pairs with ``a > b`` (ties count one half). ``method`` is
    ``"exact"`` (enumerated null distribution, tie-free samples only),
    ``"asymptotic"`` (normal approximation with tie and continuity
    corrections) or ``"auto"``: exact when the pooled size is at most 12 and
    there are no ties.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Mann-Whitney needs two non-empty samples")
    if method not in ("auto", "exact", "asymptotic"):
        raise ValueError(f"unknown method {method!r}")
    n1, n2 = len(a), len(b)
    N = n1 + n2
    ranks, ties = _midranks(np.concatenate([a, b]))
    U = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    has_ties = bool((ties > 1).any())
    if method == "auto":
        method = "exact" if N <= EXACT_MAX_N and not has_ties else "asymptotic"
    if method == "exact":
        if has_ties:
            raise ValueError("the exact test needs tie-free samples")
        counts = u_distribution(n1, n2)
        u = int(round(U))
        total = counts.sum()
        lower = counts[:u + 1].sum() / total
        upper = counts[u:].sum() / total
        return U, float(min(1.0, 2.0 * min(lower, upper)))
    mu = n1 * n2 / 2.0
    tie_term = float((ties ** 3 - ties).sum()) / (N * (N - 1)) if N > 1 else 0.0
    var = n1 * n2 / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return U, 1.0
    z = max(abs(U - mu) - 0.5, 0.0) / math.sqrt(var)
    return U, float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def spearman(x, y) -> float:
    """Spearman rank correlation with midranks; 0 when either side is constant."""
    rx = _midranks(np.asarray(x, dtype=float))[0]
    ry = _midranks(np.asarray(y, dtype=float))[0]
    if np.std(rx) == 0 or np.std(ry) == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])


# ---------------------------------------------------------------------------

@dataclass
class BatchScore:
    vrc: float
    vcx: float
    cost_mean: float
    cost_std: float
    lof_mean: float
    lof_std: float
    n: int
    n_infeasible: int = 0
    n_not_converged: int = 0
    n_clipped: int = 0
    recourse_l1: float = math.nan


def score_batch(clf: Classifier, true_inputs, explanations: list[Explanation],
                lof: LOF | None = None) -> BatchScore:
    n = _check_batch(true_inputs, explanations)
    v, clipped = vrc_detail(clf, true_inputs, explanations)
    c_mean, c_std = cost(true_inputs, explanations)
    l_mean, l_std = lof_scores(lof, explanations) if lof is not None else (math.nan, math.nan)
    return BatchScore(
        vrc=v,
        vcx=vcx(clf, explanations),
        cost_mean=c_mean,
        cost_std=c_std,
        lof_mean=l_mean,
        lof_std=l_std,
        n=n,
        n_infeasible=sum(e.status == "infeasible" for e in explanations),
        n_not_converged=sum(e.status == "not_converged" for e in explanations),
        n_clipped=clipped,
        recourse_l1=recourse_l1(explanations),
    )
