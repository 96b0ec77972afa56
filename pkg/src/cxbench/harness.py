"""Benchmark orchestration: configuration, the bench pipeline, aggregation,
the Wachter hyperparameter sweep, and report rendering.

All randomness derives from the master seed through :func:`derive_seed`, so
a run is a pure function of its configuration.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import multiprocessing
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, MaskSpec, ingest_csv, mask_mcar, split
from .errors import ConfigError
from .explainers import (
    INFEASIBLE, METHODS, NON_ROBUST_METHODS, ROBUST_METHODS, Explanation, MethodContext,
    TrainingPool, explain, method_params, _make,
)
from .impute import KINDS, bootstrap_draws, fit, impute_multi
from .metrics import LOF, mann_whitney_u, score_batch
from .model import Classifier, TrainConfig, train
from .robustness import retrain_ensemble

log = logging.getLogger(__name__)

# tags separating the random streams of one (repetition, dataset) pair
_SPLIT, _TRAIN, _BATCH, _MASK, _METHOD, _BOOT = range(6)


def derive_seed(*parts: int) -> int:
    return int(np.random.default_rng([int(p) for p in parts]).integers(2**31 - 1))


# ---------------------------------------------------------------------------
# configuration

@dataclass
class DatasetSpec:
    name: str
    path: str
    target: str
    threshold: float = 0.5


@dataclass
class BenchConfig:
    datasets: list[DatasetSpec]
    n_batch: int = 100
    m_values: list[int] = field(default_factory=lambda: [1, 2, 3])
    imputers: list[str] = field(default_factory=lambda: list(KINDS))
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    method_params: dict = field(default_factory=dict)
    imputer_params: dict = field(default_factory=dict)
    armin_mice_only: bool = True
    model: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    repetitions: int = 1
    output_dir: str = "results"
    lof_k: int | None = None
    record_runtime: bool = False

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if self.n_batch < 1:
            raise ConfigError("n_batch must be at least 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if any(m < 0 for m in self.m_values) or not self.m_values:
            raise ConfigError("m_values must be a non-empty list of non-negative integers")
        bad = [k for k in self.imputers if k not in KINDS]
        if bad or not self.imputers:
            raise ConfigError(f"unknown imputers {bad}; choose from {list(KINDS)}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        for name, params in self.method_params.items():
            try:
                method_params(name, params)
            except KeyError as e:
                raise ConfigError(str(e.args[0])) from None

    def params_for(self, method: str) -> dict:
        return method_params(method, self.method_params.get(method))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = {"master": d.pop("master_seed"), "repetitions": d.pop("repetitions")}
        return d


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing key {key!r}")
    return doc[key]


def _read_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else (base / q))


def _datasets(doc, base: Path) -> list[DatasetSpec]:
    out = []
    for i, d in enumerate(_require(doc, "datasets", "config")):
        if not isinstance(d, dict):
            raise ConfigError(f"datasets[{i}] must be an object")
        out.append(DatasetSpec(
            name=str(d.get("name") or Path(_require(d, "path", f"datasets[{i}]")).stem),
            path=_resolve(base, _require(d, "path", f"datasets[{i}]")),
            target=str(_require(d, "target", f"datasets[{i}]")),
            threshold=float(d.get("threshold", 0.5)),
        ))
    return out


_BENCH_KEYS = {"datasets", "n_batch", "m_values", "imputers", "methods", "method_params",
               "imputer_params", "armin_mice_only", "model", "seeds", "output_dir",
               "lof_k", "record_runtime"}


def bench_config_from_dict(doc: dict, base: Path = Path(".")) -> BenchConfig:
    unknown = set(doc) - _BENCH_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        methods = doc.get("methods", list(METHODS))
        method_params_ = dict(doc.get("method_params", {}))
        names = []
        for m in methods:
            # entries may be plain names or {"name": ..., "params": {...}}
            if isinstance(m, dict):
                names.append(m["name"])
                if m.get("params"):
                    method_params_[m["name"]] = m["params"]
            else:
                names.append(m)
        seeds = doc.get("seeds", {})
        out_dir = doc.get("output_dir", "results")
        return BenchConfig(
            datasets=_datasets(doc, base),
            n_batch=int(doc.get("n_batch", 100)),
            m_values=[int(m) for m in doc.get("m_values", [1, 2, 3])],
            imputers=list(doc.get("imputers", list(KINDS))),
            methods=names,
            method_params=method_params_,
            imputer_params=dict(doc.get("imputer_params", {})),
            armin_mice_only=bool(doc.get("armin_mice_only", True)),
            model=TrainConfig(**doc.get("model", {})),
            master_seed=int(seeds.get("master", 0)),
            repetitions=int(seeds.get("repetitions", 1)),
            output_dir=_resolve(base, out_dir),
            lof_k=doc.get("lof_k"),
            record_runtime=bool(doc.get("record_runtime", False)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid config: {e}") from None


def load_bench_config(path) -> BenchConfig:
    path = Path(path)
    return bench_config_from_dict(_read_json(path), path.parent)


# ---------------------------------------------------------------------------
# rows

@dataclass
class ReportRow:
    dataset: str
    method: str
    imputer: str
    m: int
    seed: int
    vrc: float
    vcx: float
    cost_mean: float
    cost_std: float
    lof_mean: float
    lof_std: float
    n_infeasible: int
    n_not_converged: int
    runtime_ms: float | None = None


ROW_FIELDS = [f.name for f in fields(ReportRow)]
_INT_FIELDS = {"m", "seed", "n_infeasible", "n_not_converged"}
_STR_FIELDS = {"dataset", "method", "imputer"}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in ROW_FIELDS])
    return buf.getvalue()


def _parse_row(d: dict) -> ReportRow:
    kw = {}
    for f in ROW_FIELDS:
        v = d.get(f, "")
        if f in _STR_FIELDS:
            kw[f] = str(v)
        elif f in _INT_FIELDS:
            kw[f] = int(v)
        elif v in ("", None):
            kw[f] = None if f == "runtime_ms" else math.nan
        else:
            kw[f] = float(v)
    return ReportRow(**kw)


def read_rows(path) -> list[ReportRow]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"rows file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ROW_FIELDS:
            raise ConfigError(f"{path}: columns {reader.fieldnames} do not match {ROW_FIELDS}")
        return [_parse_row(d) for d in reader]


def rows_to_json(rows: list[ReportRow]) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v
    return json.dumps([{k: clean(v) for k, v in asdict(r).items()} for r in rows], indent=1)


def rows_from_json(text: str) -> list[ReportRow]:
    out = []
    for d in json.loads(text):
        d = {k: (math.nan if v is None and k != "runtime_ms" else v) for k, v in d.items()}
        out.append(ReportRow(**d))
    return out


# ---------------------------------------------------------------------------
# bench pipeline

@dataclass
class Prepared:
    """State shared by every cell of one (repetition, dataset) pair."""

    name: str
    rep_seed: int
    ds: Dataset
    clf: Classifier
    train_X: np.ndarray
    batch_X: np.ndarray  # true inputs, (n_batch, n)
    targets: np.ndarray
    masked: dict  # m -> (n_batch, n) with NaNs
    imputed: dict  # (m, imputer) -> (n_batch, n)
    completions: dict  # m -> list of (J, n) arrays for ARMIN
    ctx: MethodContext
    lof: LOF
    method_seed: int
    accuracy: float
    batch_rows: np.ndarray
    warnings: list = field(default_factory=list)


def prepare(cfg: BenchConfig, d_idx: int, rep: int, need_armin: bool = True,
            imputers=None, m_values=None) -> Prepared:
    spec = cfg.datasets[d_idx]
    rep_seed = cfg.master_seed + rep
    ds = ingest_csv(spec.path, spec.target, spec.threshold, spec.name)
    m_values = cfg.m_values if m_values is None else m_values
    imputers = cfg.imputers if imputers is None else imputers
    bad = [m for m in m_values if m > ds.n_features]
    if bad:
        raise ConfigError(f"m_values {bad} exceed the {ds.n_features} features of {spec.name}")
    sp = split(ds, derive_seed(rep_seed, d_idx, _SPLIT))
    tcfg = TrainConfig(**{**asdict(cfg.model), "seed": derive_seed(rep_seed, d_idx, _TRAIN)})
    clf = train(sp.train, tcfg)
    test = sp.test
    accuracy = float(np.mean(clf.predict_class(test.features) == test.labels))

    warnings = []
    rng = np.random.default_rng(derive_seed(rep_seed, d_idx, _BATCH))
    replace = cfg.n_batch > test.n_rows
    if replace:
        msg = (f"{spec.name}: test split has {test.n_rows} rows < n_batch={cfg.n_batch}; "
               "sampling with replacement")
        log.warning(msg)
        warnings.append(msg)
    rows = rng.choice(test.n_rows, size=cfg.n_batch, replace=replace)
    X = test.features[rows]
    targets = 1 - np.asarray(clf.predict_class(X))

    mask_seed = derive_seed(rep_seed, d_idx, _MASK)
    masked = {m: np.array([mask_mcar(x, MaskSpec(m, derive_seed(mask_seed, m, i)))
                           for i, x in enumerate(X)]) for m in m_values}
    fitted = {k: fit(k, sp.train, **cfg.imputer_params.get(k, {})) for k in imputers}
    imputed = {(m, k): np.array([fitted[k].impute(x) for x in masked[m]])
               for m in m_values for k in imputers}
    completions = {}
    if need_armin:
        mice = fitted.get("mice") or fit("mice", sp.train, **cfg.imputer_params.get("mice", {}))
        J = int(cfg.params_for("armin")["J"])
        draws = bootstrap_draws(mice, J, derive_seed(rep_seed, d_idx, _BOOT))
        completions = {m: [np.array(impute_multi(mice, x, J, draws=draws)) for x in masked[m]]
                       for m in m_values}

    method_seed = derive_seed(rep_seed, d_idx, _METHOD)
    params = {name: cfg.params_for(name) for name in METHODS}

    def ensemble(E, seed):
        return retrain_ensemble(sp.train, tcfg, E, seed)

    ctx = MethodContext(clf, TrainingPool(clf, sp.train.features), params, method_seed, ensemble)
    lof = LOF(sp.train.features, cfg.lof_k)
    return Prepared(spec.name, rep_seed, ds, clf, sp.train.features, X, targets, masked,
                    imputed, completions, ctx, lof, method_seed, accuracy, rows, warnings)


def cells_for(cfg: BenchConfig) -> list[tuple[int, str, str]]:
    """(m, imputer, method) cells in output order."""
    out = []
    for m in cfg.m_values:
        for imp in cfg.imputers:
            for method in cfg.methods:
                if method == "armin" and cfg.armin_mice_only and imp != "mice":
                    continue
                out.append((m, imp, method))
    return out


def run_cell(prep: Prepared, m: int, imputer: str, method: str,
             dump_dir: str | None = None) -> tuple[list[Explanation], list[str]]:
    xs = prep.imputed[(m, imputer)]
    out, errors = [], []
    for i, (x_hat, t) in enumerate(zip(xs, prep.targets)):
        comps = prep.completions[m][i] if method == "armin" and imputer == "mice" else None
        if method == "armin" and comps is None:
            comps = [x_hat]
        try:
            e = explain(method, prep.ctx, x_hat, int(t), seed=prep.method_seed ^ i,
                        completions=comps)
        except Exception as exc:  # one bad instance must not abort the run
            errors.append(f"{prep.name}/{method}/{imputer}/m={m}/#{i}: {exc!r}")
            e = _make(method, x_hat, int(t), INFEASIBLE, info={"error": repr(exc)})
        out.append(e)
        if dump_dir and method in ("mce", "armin", "mcer"):
            _dump_milo(dump_dir, prep, m, imputer, method, i, x_hat, int(t), comps)
    return out, errors


def _dump_milo(dump_dir, prep, m, imputer, method, i, x_hat, t, comps):
    from .solver.milo import MiloProblem, encode, to_lp_text
    p = prep.ctx.p(method)
    anchors = comps if method == "armin" else [x_hat]
    enc = encode(MiloProblem(prep.clf, anchors, t, p["margin"]))
    if enc is None:
        return
    name = f"{prep.name}_s{prep.rep_seed}_m{m}_{imputer}_{method}_{i}"
    path = Path(dump_dir) / f"{name}.lp"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_lp_text(enc, name), encoding="utf-8")


def score_cell(prep: Prepared, cfg: BenchConfig, m, imputer, method, expls) -> tuple[ReportRow, dict]:
    sc = score_batch(prep.clf, prep.batch_X, expls, prep.lof)
    runtime = None
    if cfg.record_runtime:
        runtime = float(round(1000.0 * sum(e.solve_time for e in expls), 3))
    row = ReportRow(prep.name, method, imputer, m, prep.rep_seed, sc.vrc, sc.vcx,
                    sc.cost_mean, sc.cost_std, sc.lof_mean, sc.lof_std,
                    sc.n_infeasible, sc.n_not_converged, runtime)
    extra = {"clipped": sc.n_clipped,
             "recourse_l1": None if math.isnan(sc.recourse_l1) else sc.recourse_l1}
    return row, extra


# process-pool plumbing: workers inherit the prepared state through fork
_POOL_STATE: dict = {}


def _pool_task(key):
    prep, cfg, dump_dir = _POOL_STATE["prep"], _POOL_STATE["cfg"], _POOL_STATE["dump"]
    m, imputer, method = key
    expls, errors = run_cell(prep, m, imputer, method, dump_dir)
    row, extra = score_cell(prep, cfg, m, imputer, method, expls)
    return row, extra, errors


def _run_cells(prep, cfg, cells, jobs, dump_dir):
    if jobs <= 1 or len(cells) <= 1:
        out = []
        for key in cells:
            expls, errors = run_cell(prep, *key, dump_dir)
            row, extra = score_cell(prep, cfg, *key, expls)
            out.append((row, extra, errors))
        return out
    _POOL_STATE.update(prep=prep, cfg=cfg, dump=dump_dir)
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            return list(pool.map(_pool_task, cells))  # map keeps submission order
    finally:
        _POOL_STATE.clear()


def config_hash(cfg: BenchConfig) -> str:
    text = json.dumps(cfg.to_dict(), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def run_bench(cfg: BenchConfig, jobs: int = 1, dump_milo: str | None = None,
              write: bool = True) -> list[ReportRow]:
    """Run every (repetition, dataset, m, imputer, method) cell and write
    ``rows.csv`` plus ``manifest.json`` into ``cfg.output_dir``."""
    rows: list[ReportRow] = []
    manifest_data = []
    cells = cells_for(cfg)
    need_armin = "armin" in cfg.methods
    for rep in range(cfg.repetitions):
        for d_idx in range(len(cfg.datasets)):
            prep = prepare(cfg, d_idx, rep, need_armin)
            log.info("%s seed %d: test accuracy %.3f", prep.name, prep.rep_seed, prep.accuracy)
            results = _run_cells(prep, cfg, cells, jobs, dump_milo)
            clipped, sizes = {}, {}
            errors = []
            for row, extra, errs in results:
                rows.append(row)
                key = f"{row.method}/{row.imputer}/m={row.m}"
                clipped[key] = extra["clipped"]
                sizes[key] = extra["recourse_l1"]
                errors.extend(errs)
            manifest_data.append({
                "dataset": prep.name,
                "seed": prep.rep_seed,
                "rows": prep.ds.n_rows,
                "dropped_rows": prep.ds.dropped_rows,
                "features": prep.ds.n_features,
                "test_accuracy": prep.accuracy,
                "batch_rows": [int(r) for r in prep.batch_rows],
                "clipped_recourses": clipped,
                "recourse_l1": sizes,
                "errors": errors,
                "warnings": prep.warnings,
            })
    if write:
        write_outputs(cfg, rows, manifest_data)
    return rows


def manifest(cfg: BenchConfig, runs: list) -> dict:
    import numba
    return {
        "package": "cxbench",
        "version": __version__,
        "config": cfg.to_dict(),
        "config_sha256": config_hash(cfg),
        "seeds": {"master": cfg.master_seed,
                  "repetitions": list(range(cfg.master_seed, cfg.master_seed + cfg.repetitions))},
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__},
        "columns": ROW_FIELDS,
        "runs": runs,
    }


def write_outputs(cfg: BenchConfig, rows, runs, stem: str = "rows") -> tuple[Path, Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(rows_to_csv(rows), encoding="utf-8")
    man_path = out / "manifest.json"
    text = json.dumps(manifest(cfg, runs), indent=1, sort_keys=True, default=_json_default)
    man_path.write_text(text + "\n", encoding="utf-8")
    return csv_path, man_path


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(f"cannot serialise {type(v)}")


# ---------------------------------------------------------------------------
# aggregation

def _quantiles(v) -> dict:
    v = np.asarray(v, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(len(v)), "median": float(med), "q1": float(q1), "q3": float(q3)}


def compare(a, b) -> dict:
    U, p = mann_whitney_u(a, b)
    return {"U": U, "p": p}


def aggregate(rows: list[ReportRow], group_by: str = "robust",
              robust=ROBUST_METHODS, non_robust=NON_ROBUST_METHODS,
              metric: str = "vrc") -> list[dict]:
    """Summaries of ``metric`` per ``m``.

    ``robust`` compares the robust against the non-robust methods with a
    two-sided Mann-Whitney test; ``imputer``, ``dataset`` and ``method``
    report one quartile summary per group.
    """
    if not rows:
        raise ValueError("no rows to aggregate")
    out = []
    for m in sorted({r.m for r in rows}):
        sub = [r for r in rows if r.m == m]
        if group_by == "robust":
            a = [getattr(r, metric) for r in sub if r.method in robust]
            b = [getattr(r, metric) for r in sub if r.method in non_robust]
            if not a or not b:
                raise ValueError(f"m={m}: both the robust and non-robust groups need rows")
            out.append({"m": m, "robust": _quantiles(a), "non_robust": _quantiles(b),
                        **compare(a, b)})
        elif group_by in ("imputer", "dataset", "method"):
            keys = sorted({getattr(r, group_by) for r in sub})
            for k in keys:
                vals = [getattr(r, metric) for r in sub if getattr(r, group_by) == k]
                out.append({"m": m, group_by: k, **_quantiles(vals)})
        else:
            raise ValueError(f"unknown grouping {group_by!r}")
    return out


# ---------------------------------------------------------------------------
# wachter sweep

_AXES = {"lr": "lr", "eps": "eps", "lambda": "lam", "lam": "lam"}


@dataclass
class SweepConfig:
    dataset: DatasetSpec
    axis_x: str = "lr"
    axis_y: str = "lambda"
    grid_x: list[float] = field(default_factory=lambda: [0.001, 0.01, 0.1, 0.5, 1.0])
    grid_y: list[float] = field(default_factory=lambda: [0.8, 0.85, 0.9, 0.95, 1.0])
    fixed: dict = field(default_factory=dict)
    imputer: str = "knn"
    m: int = 2
    n_batch: int = 100
    model: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        for ax in (self.axis_x, self.axis_y):
            if ax not in _AXES:
                raise ConfigError(f"unknown sweep axis {ax!r}; choose from {sorted(_AXES)}")
        if _AXES[self.axis_x] == _AXES[self.axis_y]:
            raise ConfigError("sweep axes must differ")
        if not self.grid_x or not self.grid_y:
            raise ConfigError("sweep grids must be non-empty")
        for ax, grid in ((self.axis_x, self.grid_x), (self.axis_y, self.grid_y)):
            if _AXES[ax] == "lam":
                if any(not 0 <= v <= 1 for v in grid):
                    raise ConfigError("lambda values must lie in [0, 1]")
            elif any(not v > 0 for v in grid):
                raise ConfigError(f"{ax} values must be positive")
        if self.imputer not in KINDS:
            raise ConfigError(f"unknown imputer {self.imputer!r}")
        try:
            method_params("wachter", self.fixed)
        except KeyError as e:
            raise ConfigError(str(e.args[0])) from None


_SWEEP_KEYS = {"method", "dataset", "axis_x", "axis_y", "grid_x", "grid_y", "fixed",
               "imputer", "m", "n_batch", "model", "seed", "output_dir"}


def load_sweep_config(path) -> SweepConfig:
    path = Path(path)
    doc = _read_json(path)
    unknown = set(doc) - _SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    if doc.get("method", "wachter") != "wachter":
        raise ConfigError("only the wachter method can be swept")
    try:
        ds = _datasets({"datasets": [_require(doc, "dataset", "sweep")]}, path.parent)[0]
        kw = {k: doc[k] for k in ("axis_x", "axis_y", "grid_x", "grid_y", "fixed",
                                  "imputer", "m", "n_batch", "seed") if k in doc}
        return SweepConfig(ds, model=TrainConfig(**doc.get("model", {})),
                           output_dir=_resolve(path.parent, doc.get("output_dir", "results")),
                           **kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid sweep config: {e}") from None


def _sweep_bench_config(sc: SweepConfig) -> BenchConfig:
    return BenchConfig([sc.dataset], n_batch=sc.n_batch, m_values=[sc.m],
                       imputers=[sc.imputer], methods=["wachter"], model=sc.model,
                       master_seed=sc.seed, output_dir=sc.output_dir)


def _sweep_cell(prep: Prepared, sc: SweepConfig, x, y):
    params = method_params("wachter", sc.fixed)
    params[_AXES[sc.axis_x]] = x
    params[_AXES[sc.axis_y]] = y
    prep.ctx.params["wachter"] = params
    expls, _ = run_cell(prep, sc.m, sc.imputer, "wachter")
    return score_batch(prep.clf, prep.batch_X, expls).vrc


def _sweep_task(key):
    x, y = key
    return _sweep_cell(_POOL_STATE["prep"], _POOL_STATE["sc"], x, y)


def sweep_wachter(sc: SweepConfig, jobs: int = 1, write: bool = True) -> list[tuple[float, float, float]]:
    """VRC of wachter on every (x, y) grid cell; writes ``sweep_<x>_<y>.csv``."""
    prep = prepare(_sweep_bench_config(sc), 0, 0, need_armin=False)
    keys = [(x, y) for y in sc.grid_y for x in sc.grid_x]
    if jobs <= 1:
        vals = [_sweep_cell(prep, sc, x, y) for x, y in keys]
    else:
        _POOL_STATE.update(prep=prep, sc=sc)
        try:
            with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("fork")) as pool:
                vals = list(pool.map(_sweep_task, keys))
        finally:
            _POOL_STATE.clear()
    grid = [(float(x), float(y), float(v)) for (x, y), v in zip(keys, vals)]
    if write:
        out = Path(sc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sweep_{sc.axis_x}_{sc.axis_y}.csv").write_text(sweep_to_csv(grid, sc), encoding="utf-8")
    return grid


def sweep_to_csv(grid, sc: SweepConfig) -> str:
    """``x,y,vrc`` rows with a blank line after each scan of ``x`` (gnuplot's grid layout)."""
    lines = [f"{sc.axis_x},{sc.axis_y},vrc"]
    prev_y = None
    for x, y, v in grid:
        if prev_y is not None and y != prev_y:
            lines.append("")  # blank line between scans, as gnuplot's pm3d expects
        lines.append(f"{x!r},{y!r},{v!r}")
        prev_y = y
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reports

FORMATS = ("markdown", "csv", "json")


def pm(mean: float, std: float, digits: int = 2) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def _order(rows):
    return sorted(rows, key=lambda r: (r.method, r.dataset, r.imputer, r.m, r.seed))


def render_markdown(rows: list[ReportRow]) -> str:
    head = "| Method | Dataset | Imputer | m | Seed | VRC | VCX | Cost | LOF |"
    lines = [head, "|" + "---|" * 9]
    for r in _order(rows):
        lines.append(f"| {r.method} | {r.dataset} | {r.imputer} | {r.m} | {r.seed} | "
                     f"{r.vrc:.3f} | {r.vcx:.3f} | {pm(r.cost_mean, r.cost_std)} | "
                     f"{pm(r.lof_mean, r.lof_std)} |")
    return "\n".join(lines) + "\n"


def report(rows: list[ReportRow], fmt: str = "markdown") -> str:
    if not rows:
        raise ValueError("no rows to report")
    if fmt == "markdown":
        return render_markdown(rows)
    if fmt == "csv":
        return rows_to_csv(_order(rows))
    if fmt == "json":
        return rows_to_json(_order(rows)) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}; choose from {list(FORMATS)}")
