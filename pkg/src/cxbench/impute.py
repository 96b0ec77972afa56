"""Mean, k-nearest-neighbour and chained-equation (MICE) imputation.

All imputers are fitted on complete training rows and never touch the
observed coordinates of the instance they complete.
"""
from __future__ import annotations

import numpy as np

from .data import Dataset

KINDS = ("simple", "knn", "mice")


def _matrix(train) -> np.ndarray:
    X = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("imputers need a non-empty training matrix")
    return X


class Imputer:
    kind = ""

    def __init__(self, X: np.ndarray):
        self.train_X = X
        self.means = X.mean(axis=0)

    @property
    def n_features(self) -> int:
        return self.train_X.shape[1]

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_features,):
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        return x.copy(), np.isnan(x)

    def impute_with_info(self, x) -> tuple[np.ndarray, dict]:
        raise NotImplementedError

    def impute(self, x) -> np.ndarray:
        return self.impute_with_info(x)[0]


class SimpleImputer(Imputer):
    kind = "simple"

    def impute_with_info(self, x):
        out, miss = self._prepare(x)
        out[miss] = self.means[miss]
        return out, {}


class KNNImputer(Imputer):
    """Unweighted mean of the ``k`` closest training rows (l2 over observed coordinates)."""

    kind = "knn"

    def __init__(self, X, k: int = 5):
        super().__init__(X)
        if not 1 <= k <= len(X):
            raise ValueError(f"k={k} needs between 1 and {len(X)} training rows")
        self.k = k

    def neighbours(self, x) -> np.ndarray:
        obs = ~np.isnan(x)
        diff = self.train_X[:, obs] - x[obs]
        d2 = np.einsum("ij,ij->i", diff, diff)
        return np.argsort(d2, kind="stable")[: self.k]

    def impute_with_info(self, x):
        out, miss = self._prepare(x)
        if not miss.any():
            return out, {"fallback": False}
        if miss.all():
            return self.means.copy(), {"fallback": True}
        nn = self.neighbours(out)
        out[miss] = self.train_X[np.ix_(nn, np.flatnonzero(miss))].mean(axis=0)
        return out, {"fallback": False}


class MICEImputer(Imputer):
    """Chained ordinary-least-squares regressions, one per feature.

    ``coef[j]`` regresses feature ``j`` on every other feature (its own
    entry is zero). Imputation starts from column means and sweeps the
    missing coordinates in index order until the largest update falls
    below ``tol`` or ``max_iter`` rounds have run.
    """

    kind = "mice"

    def __init__(self, X, max_iter: int = 10, tol: float = 1e-6):
        super().__init__(X)
        self.max_iter = max_iter
        self.tol = tol
        n = X.shape[1]
        self.coef = np.zeros((n, n))
        self.intercept = np.zeros(n)
        ones = np.ones((len(X), 1))
        for j in range(n):
            others = [i for i in range(n) if i != j]
            design = np.hstack([ones, X[:, others]])
            sol, *_ = np.linalg.lstsq(design, X[:, j], rcond=None)
            self.intercept[j] = sol[0]
            self.coef[j, others] = sol[1:]

    def impute_with_info(self, x):
        out, miss = self._prepare(x)
        history: list[float] = []
        if not miss.any():
            return out, {"max_change": history}
        out[miss] = self.means[miss]
        cols = np.flatnonzero(miss)
        for _ in range(self.max_iter):
            prev = out.copy()
            for j in cols:
                out[j] = self.intercept[j] + self.coef[j] @ out
            change = float(np.max(np.abs(out - prev)))
            history.append(change)
            if change < self.tol:
                break
        return out, {"max_change": history}

    def bootstrap(self, seed: int) -> "MICEImputer":
        rng = np.random.default_rng(seed)
        rows = rng.integers(0, len(self.train_X), size=len(self.train_X))
        return MICEImputer(self.train_X[rows], self.max_iter, self.tol)


def fit(kind: str, train, **params) -> Imputer:
    X = _matrix(train)
    if kind == "simple":
        return SimpleImputer(X)
    if kind == "knn":
        return KNNImputer(X, **params)
    if kind == "mice":
        return MICEImputer(X, **params)
    raise ValueError(f"unknown imputer {kind!r}; choose from {KINDS}")


def impute(imp: Imputer, x) -> np.ndarray:
    return imp.impute(x)


def impute_multi(imp: MICEImputer, x, J: int = 5, seed: int = 0,
                 draws: list[MICEImputer] | None = None) -> list[np.ndarray]:
    """``J`` completions of ``x``: the plain MICE one plus bootstrap refits.

    Draw ``j >= 1`` refits MICE on a bootstrap resample seeded by
    ``seed + j``. Pass ``draws`` (as built by :func:`bootstrap_draws`) to
    reuse refits across many instances.
    """
    if not isinstance(imp, MICEImputer):
        raise TypeError("multiple imputation needs a MICE imputer")
    if J < 1:
        raise ValueError("J must be at least 1")
    if draws is None:
        draws = bootstrap_draws(imp, J, seed)
    out = [imp.impute(x)]
    out.extend(d.impute(x) for d in draws[: J - 1])
    return out


def bootstrap_draws(imp: MICEImputer, J: int, seed: int) -> list[MICEImputer]:
    return [imp.bootstrap(seed + j) for j in range(1, J)]
