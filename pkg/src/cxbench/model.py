"""Two-layer ReLU binary classifier.

``score(x) = w2 . relu(W1 x + b1) + b2`` and the predicted class is 1 iff
``score >= 0`` (equivalently ``sigmoid(score) >= 0.5``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, MissingFileError, ModelFormatError


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 16
    epochs: int = 200
    step_size: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError(f"invalid training config {self}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


@dataclass(frozen=True)
class WeightInterval:
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("weight radius must be non-negative")


@dataclass(eq=False)
class Classifier:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    norm_params: np.ndarray | None = field(default=None, repr=False)
    seed: int | None = None

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.b1 = np.asarray(self.b1, dtype=float).reshape(-1)
        self.w2 = np.asarray(self.w2, dtype=float).reshape(-1)
        self.b2 = float(self.b2)
        h = self.W1.shape[0]
        if h < 1 or self.b1.shape != (h,) or self.w2.shape != (h,):
            raise DimensionError(
                f"inconsistent shapes W1{self.W1.shape} b1{self.b1.shape} w2{self.w2.shape}"
            )

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise DimensionError(f"expected {self.n_inputs} features, got {x.shape[-1]}")
        return x

    def pre_activation(self, x):
        x = self._check(x)
        return x @ self.W1.T + self.b1

    def score(self, x):
        """Raw score for one instance (float) or a batch (1-d array)."""
        a = self.pre_activation(x)
        s = np.maximum(a, 0.0) @ self.w2 + self.b2
        return float(s) if np.ndim(s) == 0 else s

    def proba(self, x):
        return sigmoid(self.score(x))

    def predict_class(self, x):
        s = self.score(x)
        if np.ndim(s) == 0:
            return int(s >= 0)
        return (s >= 0).astype(int)

    def perturbed(self, dW1, db1, dw2, db2) -> "Classifier":
        return Classifier(self.W1 + dW1, self.b1 + db1, self.w2 + dw2, self.b2 + db2,
                          self.norm_params, self.seed)

    def params_equal(self, other: "Classifier") -> bool:
        return (np.array_equal(self.W1, other.W1) and np.array_equal(self.b1, other.b1)
                and np.array_equal(self.w2, other.w2) and self.b2 == other.b2)


def sigmoid(s):
    # split form avoids overflow warnings for large |s|
    s = np.asarray(s, dtype=float)
    e = np.exp(-np.abs(s))
    out = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def predict(clf: Classifier, x) -> tuple[int, float]:
    s = clf.score(x)
    if np.ndim(s) != 0:
        raise DimensionError("predict takes a single instance")
    return int(s >= 0), s


def score_gradient(clf: Classifier, x) -> np.ndarray:
    """d score / d x; the ReLU subgradient at 0 is taken as 0."""
    a = clf.pre_activation(x)
    return (clf.w2 * (a > 0)) @ clf.W1


def input_gradient(clf: Classifier, x) -> np.ndarray:
    """Gradient of ``sigmoid(score(x))`` with respect to ``x``."""
    x = clf._check(x)
    if x.ndim != 1:
        raise DimensionError("input_gradient takes a single instance")
    p = sigmoid(clf.score(x))
    return p * (1.0 - p) * score_gradient(clf, x)


def interval_score(clf: Classifier, x, wi: WeightInterval | float):
    """Sound score bounds over every parameter setting within ``+-radius``.

    Accepts one instance or a batch; returns ``(lo, hi)`` as floats or arrays.
    """
    r = wi.radius if isinstance(wi, WeightInterval) else float(wi)
    if r < 0:
        raise ValueError("weight radius must be non-negative")
    x = clf._check(x)
    centre = x @ clf.W1.T + clf.b1
    spread = r * (np.abs(x).sum(axis=-1, keepdims=True) + 1.0)
    h_lo = np.maximum(centre - spread, 0.0)
    h_hi = np.maximum(centre + spread, 0.0)
    w_lo, w_hi = clf.w2 - r, clf.w2 + r
    corners = np.stack([w_lo * h_lo, w_lo * h_hi, w_hi * h_lo, w_hi * h_hi])
    lo = corners.min(axis=0).sum(axis=-1) + clf.b2 - r
    hi = corners.max(axis=0).sum(axis=-1) + clf.b2 + r
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi


def init_classifier(n_inputs: int, hidden: int, seed: int) -> Classifier:
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (n_inputs + hidden))
    lim2 = math.sqrt(6.0 / (hidden + 1))
    W1 = rng.uniform(-lim1, lim1, size=(hidden, n_inputs))
    w2 = rng.uniform(-lim2, lim2, size=hidden)
    return Classifier(W1, np.zeros(hidden), w2, 0.0, seed=seed)


def bce_loss(clf: Classifier, X, y) -> float:
    s = clf.score(X)
    y = np.asarray(y, dtype=float)
    # log(1 + exp(-s)) for y=1 and log(1 + exp(s)) for y=0, computed stably
    return float(np.mean(np.logaddexp(0.0, -s) * y + np.logaddexp(0.0, s) * (1 - y)))


def train(ds, cfg: TrainConfig = TrainConfig()) -> Classifier:
    """Mini-batch gradient descent on binary cross-entropy; deterministic in ``cfg.seed``."""
    X = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels, dtype=float)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class")
    clf = init_classifier(X.shape[1], cfg.hidden_width, cfg.seed)
    W1, b1, w2, b2 = clf.W1.copy(), clf.b1.copy(), clf.w2.copy(), clf.b2
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(X)
    lr = cfg.step_size
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            a = xb @ W1.T + b1
            h = np.maximum(a, 0.0)
            s = h @ w2 + b2
            g = (sigmoid(s) - yb) / len(idx)  # dL/ds
            gh = np.outer(g, w2) * (a > 0)
            w2 -= lr * (h.T @ g)
            b2 -= lr * g.sum()
            W1 -= lr * (gh.T @ xb)
            b1 -= lr * gh.sum(axis=0)
    norm = getattr(ds, "norm_params", None)
    return Classifier(W1, b1, w2, b2, norm, cfg.seed)


def to_dict(clf: Classifier) -> dict:
    return {
        "n": clf.n_inputs,
        "hidden": clf.hidden,
        "W1": clf.W1.tolist(),
        "b1": clf.b1.tolist(),
        "w2": clf.w2.tolist(),
        "b2": clf.b2,
        "norm_params": None if clf.norm_params is None else np.asarray(clf.norm_params).tolist(),
        "seed": clf.seed,
    }


def dumps(clf: Classifier) -> str:
    return json.dumps(to_dict(clf), indent=1)


def save(clf: Classifier, path) -> Path:
    path = Path(path)
    path.write_text(dumps(clf) + "\n", encoding="utf-8")
    return path


def _array(doc, key, shape):
    try:
        arr = np.asarray(doc[key], dtype=float)
    except KeyError:
        raise ModelFormatError("missing field", key) from None
    except (TypeError, ValueError):
        raise ModelFormatError("not a numeric array", key) from None
    if arr.shape != shape:
        raise ModelFormatError(f"expected shape {shape}, got {arr.shape}", key)
    return arr


def from_dict(doc: dict) -> Classifier:
    if not isinstance(doc, dict):
        raise ModelFormatError("top-level value must be an object")
    try:
        n, h = int(doc["n"]), int(doc["hidden"])
    except KeyError as e:
        raise ModelFormatError("missing field", e.args[0]) from None
    except (TypeError, ValueError):
        raise ModelFormatError("n and hidden must be integers") from None
    W1 = _array(doc, "W1", (h, n))
    b1 = _array(doc, "b1", (h,))
    w2 = _array(doc, "w2", (h,))
    b2 = _array(doc, "b2", ())
    norm = doc.get("norm_params")
    if norm is not None:
        norm = _array(doc, "norm_params", (n, 2))
    return Classifier(W1, b1, w2, float(b2), norm, doc.get("seed"))


def loads(text: str) -> Classifier:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"malformed model file: {e}") from None
    return from_dict(doc)


def load(path) -> Classifier:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"model file not found: {path}")
    return loads(path.read_text(encoding="utf-8"))
