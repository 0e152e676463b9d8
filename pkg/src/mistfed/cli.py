"""Command-line front end (``mistfed`` / ``python -m mistfed``).

Exit codes: 0 success, 2 usage/config problems, 1 runtime failures.  Errors
print one ``error[<category>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .checkpoint import checkpoint_from_state, save_checkpoint
from .config import ExperimentConfig, desk_benchmark, with_overrides
from .data import CsvSchema, Samples, data_quality, load_csv
from .errors import ConfigurationError, MistFedError, UsageError
from .hierarchy import SelectionConfig
from .metrics import write_curve_csv
from .model import TrainHyper
from .orchestrator import CLIENTS_GRID, ROUNDS_GRID, RoundReport, run_experiment, run_sweep

_TRAIN = TrainHyper()
_SEL = SelectionConfig()
_BASE = desk_benchmark()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser, grid: bool) -> None:
    p.add_argument("--config", help="experiment JSON (default: built-in desk benchmark)")
    p.add_argument("--out", default="mistfed-out", help="output directory (default: %(default)s)")
    p.add_argument("--seed", type=int, help=f"base seed (default: {_BASE.seed})")
    if grid:
        p.add_argument("--clients", type=_int_list, help=f"client counts (default: {','.join(map(str, CLIENTS_GRID))})")
        p.add_argument("--rounds", type=_int_list, help=f"round counts (default: {','.join(map(str, ROUNDS_GRID))})")
    else:
        p.add_argument("--clients", type=int, help=f"number of clients (default: {_BASE.num_clients})")
        p.add_argument("--rounds", type=int, help=f"number of rounds (default: {_BASE.num_rounds})")
    p.add_argument("--mu", type=float, help=f"FedProx proximal coefficient (default: {_TRAIN.mu})")
    p.add_argument("--epochs", type=int, help=f"local epochs (default: {_TRAIN.local_epochs})")
    p.add_argument("--batch", type=int, help=f"batch size (default: {_TRAIN.batch_size})")
    p.add_argument("--select", type=_on_off, help="utility-based Edge selection on/off (default: off)")
    p.add_argument("--alpha", type=float, help=f"utility weight on dataset size (default: {_SEL.alpha})")
    p.add_argument("--beta", type=float, help=f"utility weight on data quality (default: {_SEL.beta})")
    p.add_argument("--tau-n", type=int, help=f"minimum dataset size (default: {_SEL.tau_n})")
    p.add_argument("--tau-q", type=float, help=f"minimum data quality (default: {_SEL.tau_q})")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl", help="round report format (default: %(default)s)")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config field by dotted path, e.g. encoder.k=32 (VALUE parsed as JSON)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mistfed", description="Mist/Edge/Fog/Cloud federated intrusion-detection simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_config_flags(sub.add_parser("run", help="run one experiment"), grid=False)
    _add_config_flags(sub.add_parser("sweep", help="run a clients x rounds grid"), grid=True)
    ing = sub.add_parser("ingest-check", help="load a CSV with its schema and summarize it")
    ing.add_argument("--csv", required=True)
    ing.add_argument("--schema", required=True)
    ing.add_argument("--modality-id")
    val = sub.add_parser("validate-config", help="check a config file")
    val.add_argument("--config", required=True)
    sub.add_parser("version", help="print the version")
    return parser


_FLAG_PATHS = {
    "seed": "seed",
    "mu": "train.mu",
    "epochs": "train.local_epochs",
    "batch": "train.batch_size",
    "select": "selection.enabled",
    "alpha": "selection.alpha",
    "beta": "selection.beta",
    "tau_n": "selection.tau_n",
    "tau_q": "selection.tau_q",
}


def _parse_set(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        return key.strip(), json.loads(raw)
    except json.JSONDecodeError:
        return key.strip(), raw


def resolve_config(args: argparse.Namespace, grid: bool) -> ExperimentConfig:
    base = ExperimentConfig.from_file(args.config) if args.config else desk_benchmark()
    overrides: dict[str, Any] = dict(_parse_set(s) for s in args.set)
    for flag, dotted in _FLAG_PATHS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[dotted] = value
    if not grid:
        if args.clients is not None:
            overrides["num_clients"] = args.clients
        if args.rounds is not None:
            overrides["num_rounds"] = args.rounds
    return with_overrides(base, overrides) if overrides else base


_CSV_COLUMNS = [
    "round", "skipped", "active_clients", "cloud_version", "accuracy", "precision", "recall", "f1",
    "roc_auc", "pr_auc", "best_accuracy", "mean_drift", "median_drift", "flagged", "flagged_attacks",
]


def _csv_row(r: RoundReport) -> list:
    m = r.metrics or {}
    d = r.drift or {}
    return [
        r.round, int(r.skipped), len(r.active_clients), r.cloud_version,
        m.get("accuracy"), m.get("precision"), m.get("recall"), m.get("f1"), m.get("roc_auc"), m.get("pr_auc"),
        r.best_accuracy, d.get("mean"), d.get("median"), r.anomaly_flags["flagged"], r.anomaly_flags["flagged_attacks"],
    ]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def cmd_run(args) -> int:
    config = resolve_config(args, grid=False)
    out = Path(args.out)
    curves_dir = out / "curves"
    curves_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(config)
    if args.format == "jsonl":
        result.write_jsonl(out / "rounds.jsonl")
    else:
        with (out / "rounds.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_CSV_COLUMNS)
            w.writerows(_csv_row(r) for r in result.reports)
    for r in result.reports:
        if r.curves is not None and r.curves.roc is not None:
            write_curve_csv(r.curves.roc, curves_dir / f"round_{r.round:04d}_roc.csv")
            write_curve_csv(r.curves.pr, curves_dir / f"round_{r.round:04d}_pr.csv")
    _write_json(out / "summary.json", {
        "code_version": __version__,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "label_mapping": result.state.label_mapping,
        "summary": result.summary(),
    })
    _write_json(out / "timing.json", {
        "experiment_wall_time_s": result.wall_time_s,
        "round_wall_time_s": [r.wall_time_s for r in result.reports],
    })
    save_checkpoint(checkpoint_from_state(result.state), out / "checkpoint.json")
    print(json.dumps(result.summary(), sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    config = resolve_config(args, grid=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_sweep(config, args.clients or list(CLIENTS_GRID), args.rounds or list(ROUNDS_GRID))
    (out / "sweep.json").write_text(report.to_json() + "\n")
    _write_json(out / "sweep_timing.json", {
        "wall_time_s": report.wall_time_s,
        "cells": [{"clients": c.clients, "rounds": c.rounds, "wall_time_s": c.wall_time_s} for c in report.cells],
    })
    failed = [c for c in report.cells if c.status != "ok"]
    print(json.dumps({"cells": len(report.cells), "failed": len(failed)}))
    return 1 if failed else 0


def cmd_ingest_check(args) -> int:
    schema = CsvSchema.from_file(args.schema)
    pooled = load_csv(args.csv, schema, modality_id=args.modality_id)
    (pool,) = pooled.pools.values()
    s: Samples = pool.samples
    summary = {
        "modality_id": pool.spec.modality_id,
        "rows": len(s),
        "invalid_rows": int((~s.valid).sum()),
        "features": pool.spec.raw_dim,
        "label_mapping": pooled.label_mapping,
        "class_counts": {str(c): int((s.y == c).sum()) for c in range(pooled.num_classes)},
        "quality": data_quality(s),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    print(f"ok {config.digest()}")
    return 0


def parse_and_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "ingest-check": cmd_ingest_check,
        "validate-config": cmd_validate,
        "version": lambda _: print(__version__) or 0,
    }
    try:
        return handlers[args.command](args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except MistFedError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error[runtime]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch())
