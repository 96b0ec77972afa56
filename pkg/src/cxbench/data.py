"""Dataset ingestion, normalization, splitting and MCAR masking.

Missing entries in an incomplete instance are represented by ``NaN``
(see :data:`MISSING`); observed coordinates are always copied bit-for-bit
from the source instance.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConstantTargetError,
    DataError,
    MissingColumnError,
    MissingFileError,
    NoUsableRowsError,
    TooFewRowsError,
)

log = logging.getLogger(__name__)

MISSING = np.nan
TRAIN_FRACTION = 0.8


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    norm_params: np.ndarray  # (n_features, 2): raw (min, max) per column
    dropped_rows: int = 0
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.norm_params = np.asarray(self.norm_params, dtype=float).reshape(-1, 2)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if len(self.labels) != len(self.features):
            raise DataError(
                f"{len(self.labels)} labels for {len(self.features)} feature rows"
            )
        if len(self.norm_params) != self.n_features:
            raise DataError("norm_params needs one (min, max) pair per column")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.n_features)]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(
            self.features[rows],
            self.labels[rows],
            list(self.feature_names),
            self.norm_params.copy(),
            name=self.name,
        )


@dataclass(frozen=True)
class MaskSpec:
    m: int
    seed: int = 0


@dataclass
class Split:
    train: Dataset
    test: Dataset
    train_rows: np.ndarray = field(repr=False, default=None)
    test_rows: np.ndarray = field(repr=False, default=None)


def minmax_params(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    return np.column_stack([raw.min(axis=0), raw.max(axis=0)])


def normalize(raw: np.ndarray, params: np.ndarray) -> np.ndarray:
    """Min-max scale ``raw`` with per-column ``params``.

    Constant columns (min == max) map to zero.
    """
    raw = np.asarray(raw, dtype=float)
    lo, hi = params[:, 0], params[:, 1]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (raw - lo) / safe
    return np.where(span > 0, out, 0.0)


def denormalize(values: np.ndarray, params: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = params[:, 0], params[:, 1]
    return values * (hi - lo) + lo


def _parse_float(cell: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def ingest_csv(path, target_column: str, threshold: float = 0.5, name: str = "") -> Dataset:
    """Read a numeric CSV and return a normalized, binarized :class:`Dataset`.

    Every non-target column is a feature. Rows with an empty or
    unparseable cell are dropped; the count is kept in ``dropped_rows``.
    The target is min-max scaled and thresholded with ``>=``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise NoUsableRowsError(f"{path} is empty") from None
        if target_column not in header:
            raise MissingColumnError(f"column {target_column!r} not in {path}")
        t_idx = header.index(target_column)
        rows = []
        dropped = 0
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                dropped += 1
                continue
            parsed = [_parse_float(c) for c in raw]
            if any(v is None for v in parsed):
                dropped += 1
                continue
            rows.append(parsed)
    if not rows:
        raise NoUsableRowsError(f"{path}: no usable rows ({dropped} dropped)")
    if dropped:
        log.warning("%s: dropped %d rows with empty or non-numeric cells", path, dropped)

    table = np.array(rows, dtype=float)
    target = table[:, t_idx]
    feats = np.delete(table, t_idx, axis=1)
    names = [h for i, h in enumerate(header) if i != t_idx]

    t_lo, t_hi = target.min(), target.max()
    if t_hi <= t_lo:
        raise ConstantTargetError(f"target column {target_column!r} is constant")
    labels = ((target - t_lo) / (t_hi - t_lo) >= threshold).astype(int)

    params = minmax_params(feats)
    return Dataset(
        normalize(feats, params), labels, names, params,
        dropped_rows=dropped, name=name or path.stem,
    )


def write_csv(path, features: np.ndarray, target: np.ndarray, feature_names, target_name: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(feature_names) + [target_name])
        for row, y in zip(features, target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def split(ds: Dataset, seed: int) -> Split:
    """Seeded shuffle followed by a floor(0.8 n) / remainder partition."""
    if ds.n_rows < 5:
        raise TooFewRowsError(f"need at least 5 rows to split, got {ds.n_rows}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n_rows)
    n_train = int(math.floor(TRAIN_FRACTION * ds.n_rows))
    tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])
    return Split(ds.subset(tr), ds.subset(te), tr, te)


def mask_mcar(x: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Return a copy of ``x`` with exactly ``spec.m`` uniformly chosen entries missing."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 0 <= spec.m <= n:
        raise ValueError(f"cannot remove {spec.m} of {n} features")
    out = x.copy()
    if spec.m:
        rng = np.random.default_rng(spec.seed)
        out[rng.choice(n, size=spec.m, replace=False)] = MISSING
    return out


def is_missing(x: np.ndarray) -> np.ndarray:
    return np.isnan(x)


def synth_blobs(n_rows: int, n_features: int, separation: float, seed: int) -> Dataset:
    """Two unit-variance Gaussian clusters ``separation`` apart, min-max normalized."""
    if n_rows < 4 or n_features < 1 or not separation > 0:
        raise ValueError("synth_blobs needs n_rows >= 4, n_features >= 1, separation > 0")
    rng = np.random.default_rng(seed)
    n0 = n_rows // 2
    n1 = n_rows - n0
    shift = np.full(n_features, separation / math.sqrt(n_features))
    x0 = rng.normal(size=(n0, n_features))
    x1 = rng.normal(size=(n1, n_features)) + shift
    raw = np.vstack([x0, x1])
    y = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    order = rng.permutation(n_rows)
    raw, y = raw[order], y[order]
    params = minmax_params(raw)
    return Dataset(normalize(raw, params), y, [], params, name="blobs")


def synth_manifold(n_rows: int, n_features: int, latent_dim: int, seed: int,
                   noise: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Raw regression table whose features lie near a curved low-dimensional manifold.

    Features mix linear and periodic functions of a uniform latent vector,
    so they are strongly but not linearly dependent. The target is a smooth
    nonlinear function of the features plus noise. Returns
    ``(features, target)`` in arbitrary raw units; feed through
    :func:`write_csv` and :func:`ingest_csv` to get a benchmark dataset.
    """
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=(n_rows, latent_dim))
    lin = rng.normal(size=(latent_dim, n_features))
    freq = rng.uniform(0.5, 1.5, size=(latent_dim, n_features))
    phase = rng.uniform(0, 2 * math.pi, size=n_features)
    amp = rng.uniform(0.3, 0.8, size=n_features)
    feats = z @ lin + amp * np.sin(2 * math.pi * (z @ freq) + phase)
    feats += noise * feats.std(axis=0) * rng.normal(size=feats.shape)
    scale = rng.uniform(1, 100, size=n_features)
    offset = rng.uniform(-50, 50, size=n_features)
    raw = feats * scale + offset

    # the target is a smooth function of the observed features plus noise
    fs = (feats - feats.mean(axis=0)) / feats.std(axis=0)
    v = rng.normal(size=n_features) / math.sqrt(n_features)
    u = rng.normal(size=n_features) / math.sqrt(n_features)
    target = fs @ v + 0.5 * np.sin(1.5 * (fs @ u)) + 0.15 * rng.normal(size=n_rows)
    # monotone rescale putting the median at the min-max midpoint, so the
    # 0.5 threshold gives balanced classes
    target = target - np.median(target)
    target = np.where(target > 0, target / target.max(), target / -target.min())
    return raw, 10.0 * target + 20.0


# name -> (rows, features, latent dimension, generator seed)
STANDINS = {
    "concrete_like": (1030, 8, 3, 11),
    "power_like": (2000, 4, 2, 12),
}


def write_standins(out_dir, names=None) -> list[dict]:
    """Write synthetic regression tables standing in for real benchmark data.

    Returns dataset entries (``name``, ``path``, ``target``) ready for a
    bench config.
    """
    out_dir = Path(out_dir)
    entries = []
    for name in names or STANDINS:
        rows, n, latent, seed = STANDINS[name]
        raw, target = synth_manifold(rows, n, latent, seed)
        path = out_dir / f"{name}.csv"
        write_csv(path, raw, target, [f"x{i}" for i in range(n)], "target")
        entries.append({"name": name, "path": str(path), "target": "target"})
    return entries
