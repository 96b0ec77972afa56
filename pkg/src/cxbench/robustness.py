"""Model-change robustness: interval certification, perturbed and retrained model sets,
and the input-neighbourhood stability score."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .model import Classifier, TrainConfig, interval_score, sigmoid, train


@dataclass(frozen=True)
class StabilityParams:
    noise_std: float = 0.05
    samples: int = 100
    k: float = 1.0
    threshold: float = 0.6

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if self.samples < 2:
            raise ValueError("need at least two stability samples")
        if self.k < 0:
            raise ValueError("k must be non-negative")


@dataclass
class ModelSet:
    """A family of classifiers standing in for plausible model changes.

    ``kind`` is ``"sampled"`` (uniform weight noise around a base model,
    member 0 is the base) or ``"retrained"`` (bootstrap retraining).
    """

    kind: str
    members: list[Classifier]
    radius: float = 0.0
    seed: int | None = None
    seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("a model set needs at least one member")
        n = self.members[0].n_inputs
        if any(m.n_inputs != n for m in self.members):
            raise ValueError("model set members disagree on input dimension")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def scores(self, x) -> np.ndarray:
        """Score of each member at ``x``; shape ``(members,)`` or ``(members, rows)``."""
        return np.array([m.score(x) for m in self.members])

    def all_predict(self, x, t: int):
        s = self.scores(x)
        ok = s >= 0 if t == 1 else s < 0
        return bool(ok.all()) if ok.ndim == 1 else ok.all(axis=0)


def certify(clf: Classifier, x, t: int, radius: float):
    """True when every classifier within ``+-radius`` of ``clf`` predicts ``t`` at ``x``.

    Uses interval bound propagation, so it is sound but conservative.
    Works on a single point or a batch of rows.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    lo, hi = interval_score(clf, x, radius)
    return lo > 0 if t == 1 else hi < 0


def sample_models(clf: Classifier, P: int, radius: float, seed: int) -> ModelSet:
    if P < 1:
        raise ValueError("P must be at least 1")
    if radius < 0:
        raise ValueError("radius must be non-negative")
    rng = np.random.default_rng(seed)
    members = [clf]
    for _ in range(P - 1):
        members.append(clf.perturbed(
            rng.uniform(-radius, radius, clf.W1.shape),
            rng.uniform(-radius, radius, clf.b1.shape),
            rng.uniform(-radius, radius, clf.w2.shape),
            rng.uniform(-radius, radius),
        ))
    return ModelSet("sampled", members, radius, seed)


def retrain_ensemble(ds: Dataset, cfg: TrainConfig, E: int, seed: int,
                     bootstrap: bool = True, max_retries: int = 10) -> ModelSet:
    """``E`` classifiers retrained on bootstrap resamples of ``ds``.

    Member ``e`` uses training seed ``cfg.seed + e``; its resample is drawn
    from ``default_rng([seed, e])``, redrawn up to ``max_retries`` times if
    it holds a single class. With ``bootstrap=False`` members differ only by
    their training seed.
    """
    if E < 1:
        raise ValueError("E must be at least 1")
    members, seeds = [], []
    for e in range(E):
        member_cfg = replace(cfg, seed=cfg.seed + e)
        data = ds
        if bootstrap:
            rng = np.random.default_rng([seed, e])
            for _ in range(max_retries):
                rows = rng.integers(0, ds.n_rows, size=ds.n_rows)
                if len(np.unique(ds.labels[rows])) == 2:
                    break
            else:
                raise ValueError("bootstrap resamples kept containing a single class")
            data = ds.subset(rows)
        members.append(train(data, member_cfg))
        seeds.append(member_cfg.seed)
    return ModelSet("retrained", members, 0.0, seed, seeds)


def stability_score(clf: Classifier, x, params: StabilityParams = StabilityParams(),
                    seed: int = 0, target: int = 1) -> float:
    """Mean minus ``k`` standard deviations of the target-class probability
    over Gaussian perturbations of ``x``."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    pts = x + params.noise_std * rng.normal(size=(params.samples, len(x)))
    p = sigmoid(clf.score(pts))
    if target == 0:
        p = 1.0 - p
    return float(p.mean() - params.k * p.std())
