"""Command-line entry point: ``marmix <experiment> [--config ...] [--seed ...] [--out ...]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments
from .exceptions import ConfigError, DataError, NumericalError

OUT_ENV = "MARMIX_OUT"
log = logging.getLogger("marmix")


def _plain(obj):
    """Convert numpy and dataclass values into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _timestamp():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_csv(path, columns, rows, rec, extra_header=None):
    """Write comma-separated rows preceded by ``#`` header lines.

    The first header line holds the timestamp; all later lines are
    deterministic for a given config.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"# generated {_timestamp()}\n")
        fh.write(f"# experiment={rec.config['experiment']} config_hash={rec.config_hash}\n")
        for k, v in (extra_header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_record(rec, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    name = rec.config["experiment"].replace("-", "_")
    written = []
    if rec.rows:
        cols = list(dict.fromkeys(k for r in rec.rows for k in r))
        path = out_dir / f"{name}_replicates.csv"
        write_csv(path, cols, [[r.get(c, "") for c in cols] for r in rec.rows], rec)
        written.append(path)
    if rec.aggregates:
        cols = list(dict.fromkeys(k for r in rec.aggregates for k in r))
        path = out_dir / f"{name}_summary.csv"
        write_csv(path, cols, [[r.get(c, "") for c in cols] for r in rec.aggregates], rec)
        written.append(path)
    for tname, table in rec.tables.items():
        path = out_dir / f"{tname}.csv"
        write_csv(path, table["columns"], table["rows"], rec, table.get("header"))
        written.append(path)
    sidecar = out_dir / f"{name}_run.yaml"
    doc = {
        "config_hash": rec.config_hash,
        "config": _plain(rec.config),
        "notes": rec.notes,
        "aggregates": _plain(rec.aggregates),
        "files": [p.name for p in written],
    }
    with open(sidecar, "w") as fh:
        fh.write(f"# generated {_timestamp()}\n")
        fh.write(f"# experiment={rec.config['experiment']} config_hash={rec.config_hash}\n")
        yaml.safe_dump(doc, fh, sort_keys=False)
    written.append(sidecar)
    return written


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config with ExperimentConfig keys")
    common.add_argument("--seed", type=int, help="base seed; replicate i uses seed + i")
    common.add_argument("--out", help=f"output directory (env {OUT_ENV} overrides the config value)")
    common.add_argument("--replicates", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="marmix", description="Gaussian mixture classification with labels missing at random.",
        epilog="exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure")
    sub = parser.add_subparsers(dest="experiment", required=True)
    p = sub.add_parser("approx-check", parents=[common], help="entropy vs squared margin confidence")
    p.add_argument("--grid-size", type=int)
    sub.add_parser("simulate-fit", parents=[common], help="three estimators on simulated MAR data")
    sub.add_parser("robustness", parents=[common], help="non-Gaussian mixtures")
    p = sub.add_parser("missing-sweep", parents=[common], help="mean AUC against missing rate")
    p.add_argument("--rates", type=float, nargs="+")
    sub.add_parser("threshold-sweep", parents=[common], help="precision/recall/accuracy over thresholds")
    p = sub.add_parser("magic", parents=[common], help="MAGIC gamma telescope pipeline")
    p.add_argument("--csv", dest="magic_csv", help="path to magic04.data")
    p.add_argument("--missing-sweep", dest="magic_missing_sweep", action="store_true", default=None)
    p.add_argument("--rates", type=float, nargs="+")
    return parser


def resolve_config(args) -> experiments.ExperimentConfig:
    overrides = {
        "experiment": args.experiment,
        "seed": args.seed,
        "replicates": args.replicates,
        "grid_size": getattr(args, "grid_size", None),
        "rates": getattr(args, "rates", None),
        "magic_csv": getattr(args, "magic_csv", None),
        "magic_missing_sweep": getattr(args, "magic_missing_sweep", None),
        "output_dir": args.out,
    }
    if os.environ.get(OUT_ENV):
        overrides["output_dir"] = os.environ[OUT_ENV]
    if args.config:
        return experiments.load_config(args.config, **overrides)
    return experiments.ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        rec = experiments.DRIVERS[cfg.experiment](cfg)
        for path in write_record(rec, Path(cfg.output_dir)):
            print(path)
    except (ConfigError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
