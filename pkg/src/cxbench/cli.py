"""Command-line entry point.

Examples
--------
  cxbench synth --out work
  cxbench bench work/bench.json --jobs 2
  cxbench report work/results/rows.csv --format markdown
  cxbench aggregate work/results/rows.csv --by robust
  cxbench sweep work/sweep.json
  cxbench explain model.json "0.2,nan,0.7,0.1" --method mce --impute knn --data d.csv --target y
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import ingest_csv, split, write_standins
from .errors import ConfigError, CxBenchError, DataError, DimensionError, ModelFormatError
from .explainers import METHODS, MethodContext, TrainingPool, explain, method_params
from .harness import (
    FORMATS, _SPLIT, _TRAIN, aggregate, derive_seed, load_bench_config, load_sweep_config,
    read_rows, report, run_bench, sweep_wachter,
)
from .impute import KINDS, fit, impute_multi
from .model import TrainConfig, load, save, train

log = logging.getLogger("cxbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
# methods that draw candidates from (or impute with) training rows
DATA_METHODS = ("bls", "kdtreennce", "rnce", "proplace", "stce", "armin")


def _bench_cfg(args):
    cfg = load_bench_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def cmd_synth(args) -> int:
    out = Path(args.out)
    entries = write_standins(out)
    rel = [{**e, "path": Path(e["path"]).name} for e in entries]
    bench = {"datasets": rel, "n_batch": 100, "m_values": [1, 2, 3],
             "imputers": list(KINDS), "methods": list(METHODS),
             "seeds": {"master": 0, "repetitions": 1}, "output_dir": "results"}
    sweep = {"method": "wachter", "dataset": rel[0], "axis_x": "lr", "axis_y": "lambda",
             "grid_x": [0.001, 0.01, 0.1, 0.5, 1.0], "grid_y": [0.8, 0.85, 0.9, 0.95, 1.0],
             "imputer": "knn", "m": 2, "n_batch": 100, "seed": 0, "output_dir": "results"}
    (out / "bench.json").write_text(json.dumps(bench, indent=1) + "\n", encoding="utf-8")
    (out / "sweep.json").write_text(json.dumps(sweep, indent=1) + "\n", encoding="utf-8")
    for e in entries:
        print(e["path"])
    print(out / "bench.json")
    print(out / "sweep.json")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _bench_cfg(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for d_idx, spec in enumerate(cfg.datasets):
        ds = ingest_csv(spec.path, spec.target, spec.threshold, spec.name)
        sp = split(ds, derive_seed(cfg.master_seed, d_idx, _SPLIT))
        tcfg = TrainConfig(**{**asdict(cfg.model),
                              "seed": derive_seed(cfg.master_seed, d_idx, _TRAIN)})
        clf = train(sp.train, tcfg)
        acc = float(np.mean(clf.predict_class(sp.test.features) == sp.test.labels))
        path = save(clf, out / f"{spec.name}.model.json")
        print(f"{spec.name}\ttest_accuracy={acc:.4f}\t{path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _bench_cfg(args)
    rows = run_bench(cfg, jobs=args.jobs, dump_milo=args.dump_milo)
    print(f"{len(rows)} rows -> {Path(cfg.output_dir) / 'rows.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = load_sweep_config(args.config)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.out is not None:
        sc = replace(sc, output_dir=args.out)
    grid = sweep_wachter(sc, jobs=args.jobs)
    print(f"{len(grid)} cells -> {Path(sc.output_dir) / f'sweep_{sc.axis_x}_{sc.axis_y}.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    text = report(read_rows(args.rows), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    summary = aggregate(read_rows(args.rows), args.by, metric=args.metric)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


def parse_instance(text: str) -> np.ndarray:
    vals = []
    for cell in text.split(","):
        cell = cell.strip().lower()
        if cell in ("", "nan", "?", "na"):
            vals.append(np.nan)
        else:
            try:
                vals.append(float(cell))
            except ValueError:
                raise ConfigError(f"instance value {cell!r} is not a number") from None
    return np.array(vals)


def cmd_explain(args) -> int:
    clf = load(args.model)
    x = parse_instance(args.instance)
    if len(x) != clf.n_inputs:
        raise DimensionError(f"instance has {len(x)} values, model expects {clf.n_inputs}")
    needs_data = np.isnan(x).any() or args.method in DATA_METHODS
    train_X = None
    if args.data:
        if not args.target:
            raise ConfigError("--data needs --target")
        train_X = ingest_csv(args.data, args.target).features
        if train_X.shape[1] != clf.n_inputs:
            raise DimensionError("data and model disagree on the number of features")
    elif needs_data:
        raise ConfigError(f"method {args.method!r} with this instance needs --data and --target")

    imp = fit(args.impute, train_X) if train_X is not None else None
    x_hat = imp.impute(x) if np.isnan(x).any() else x.copy()
    t = 1 - clf.predict_class(x_hat) if args.target_class is None else args.target_class
    comps = None
    if args.method == "armin":
        mice = fit("mice", train_X)
        comps = impute_multi(mice, x, method_params("armin")["J"], seed=args.seed)
        x_hat = comps[0]
    pool = TrainingPool(clf, train_X if train_X is not None else x_hat[None, :])
    ctx = MethodContext(clf, pool, {}, args.seed)
    e = explain(args.method, ctx, x_hat, int(t), seed=args.seed, completions=comps)
    if args.dump_milo and args.method in ("mce", "mcer", "armin"):
        from .solver.milo import MiloProblem, encode, to_lp_text
        anchors = comps if comps is not None else [x_hat]
        enc = encode(MiloProblem(clf, anchors, int(t), ctx.p(args.method)["margin"]))
        if enc is not None:
            path = Path(args.dump_milo)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(to_lp_text(enc), encoding="utf-8")

    def arr(v):
        return None if v is None else [float(a) for a in v]

    print(json.dumps({
        "method": e.method, "status": e.status, "target": e.target,
        "x_hat": arr(e.x_hat), "x": arr(e.x), "delta": arr(e.delta),
        "prediction": None if e.x is None else int(clf.predict_class(e.x)),
        "info": {k: v for k, v in e.info.items() if isinstance(v, (int, float, str))},
    }, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cxbench", description="Counterfactual explanation benchmark "
                                 "for inputs with missing values.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, jobs=True):
        p.add_argument("config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")

    p = sub.add_parser("synth", help="write synthetic stand-in datasets and default configs")
    p.add_argument("--out", default="work")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and save one classifier per configured dataset")
    common(p, jobs=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run the benchmark grid")
    common(p)
    p.add_argument("--dump-milo", default=None, metavar="DIR",
                   help="write every MILO instance in LP format into DIR")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="wachter hyperparameter grid")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render a rows CSV as a table")
    p.add_argument("rows")
    p.add_argument("--format", choices=FORMATS, default="markdown")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("aggregate", help="medians, quartiles and Mann-Whitney tests")
    p.add_argument("rows")
    p.add_argument("--by", choices=("robust", "imputer", "dataset", "method"), default="robust")
    p.add_argument("--metric", default="vrc", choices=("vrc", "vcx", "cost_mean", "lof_mean"))
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("explain", help="explain a single instance")
    p.add_argument("model", help="model JSON written by `train`")
    p.add_argument("instance", help="comma-separated normalized values; nan or ? marks missing")
    p.add_argument("--method", choices=METHODS, default="mce")
    p.add_argument("--impute", choices=KINDS, default="knn")
    p.add_argument("--data", default=None, help="CSV with training rows (imputers, data methods)")
    p.add_argument("--target", default=None, help="target column of --data")
    p.add_argument("--target-class", type=int, choices=(0, 1), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-milo", default=None, metavar="FILE")
    p.set_defaults(func=cmd_explain)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ModelFormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, DimensionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CxBenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
