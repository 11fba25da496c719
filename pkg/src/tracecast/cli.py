"""``tracecast`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error (missing
or malformed input files, checkpoints, labels), 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import detector as det
from . import graphnet, harness, nbeats, synth
from .config import ConfigError, RunConfig, load_config, validate_config
from .numcore.checkpoint import CheckpointError
from .numcore.tensor import NumericError, ShapeError

log = logging.getLogger("tracecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("synth", "inject", "train", "forecast", "detect", "eval", "bench", "ablate", "complexity")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config "
                        "out_dir, then $TRACECAST_OUT, then ./runs)")
    common.add_argument("--full-grid", action="store_true",
                        help="use all six lookback/horizon pairs")
    common.add_argument("--workers", type=int, default=1, metavar="N",
                        help="parallel training jobs")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    p = _Parser(prog="tracecast", description="Forecast-based anomaly prediction on sensor traces.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "synth": "generate the configured datasets (trace, labels, descriptor)",
        "inject": "re-apply the configured anomalies to a clean normalized trace",
        "train": "train the configured model for every window",
        "forecast": "write test and reference forecasts from trained checkpoints",
        "detect": "score the test run and write detection reports",
        "eval": "collect detection summaries into a result table",
        "bench": "full sweep: train, detect and evaluate every cell",
        "ablate": "graph model sweep over top_k with a per-top_k summary",
        "complexity": "parameter counts per window (and wall times of a finished sweep)",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
        if name == "inject":
            sp.add_argument("--trace", metavar="PATH",
                            help="clean normalized 3-run trace CSV (default <out>/<dataset>/clean.csv)")
        if name == "complexity":
            sp.add_argument("--nodes", type=int, default=131, help="number of variables D")
    return p


# ------------------------------------------------------------------ helpers

def _load(args) -> RunConfig:
    # the seed goes into the document so recipes without their own seed follow it
    if args.seed is not None and args.seed < 0:
        raise UsageError("--seed must be >= 0")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        return load_config(path, args.seed)
    doc = {"dataset": {}}
    if args.seed is not None:
        doc["seed"] = args.seed
    return validate_config(doc)


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.out_dir or os.environ.get("TRACECAST_OUT") or "runs")


def _windows(args, cfg: RunConfig):
    return harness.FULL_GRID if args.full_grid else cfg.windows


def _top_ks(cfg: RunConfig, model: str):
    return cfg.model.top_k if model == "gnn" else (None,)


def _plan(args, cfg: RunConfig, out: Path, model=None, top_k=None):
    return cfg.plan(str(out), _windows(args, cfg), args.workers, model, top_k)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _prepared_from_files(out: Path, spec: harness.DatasetSpec) -> harness.PreparedDataset:
    d = out / spec.name
    trace = ds.load_trace(_require(d / "trace.csv", "trace (run `synth` first)"), 3)
    labels = ds.load_labels(_require(d / "labels.csv", "labels (run `synth` first)"), 3)
    if labels.shape != trace.values.shape:
        raise DataError(f"{d / 'labels.csv'}: shape {labels.shape} != trace {trace.values.shape}")
    return harness.PreparedDataset(spec.name, synth.LabeledTrace(trace, labels), spec.recipe.classes)


def _load_trained(cell_dir: Path, dataset: str, model: str, names):
    if model == "gnn":
        path = cell_dir / f"{dataset}.gnn"
        if not path.exists():
            raise DataError(f"checkpoint not found: {path} (run `train` first)")
        return graphnet.load_model(path)
    models = []
    for v in names:
        path = harness.nbeats_checkpoint(cell_dir, v)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path} (run `train` first)")
        models.append(nbeats.load_model(path))
    return models


def _cells(args, cfg: RunConfig, model: str | None = None):
    model = model or cfg.model.kind
    for spec in cfg.datasets:
        for L, H in _windows(args, cfg):
            for k in _top_ks(cfg, model):
                yield spec, harness.Cell(spec.name, model, L, H, k, cfg.seed)


def _write_estimates(path: Path, est: det.Estimates, names, dt: float) -> None:
    rows = [{"time": repr(n * dt), "coverage": int(est.coverage[n]),
             **{v: ("" if np.isnan(x) else repr(float(x))) for v, x in zip(names, est.values[n])}}
            for n in range(est.values.shape[0])]
    harness.write_rows(path, ("time", "coverage", *names), rows)


def _print(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _table_text(records, columns) -> str:
    lines = ["\t".join(columns)]
    for r in records:
        lines.append("\t".join("" if r[c] is None else
                               (f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]))
                               for c in columns))
    return "\n".join(lines)


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    for spec in cfg.datasets:
        prep = harness.prepare(spec)
        d = out / spec.name
        ds.save_trace(d / "raw.csv", prep.raw)
        ds.save_trace(d / "clean.csv", harness.prepare(harness.DatasetSpec(spec.name, spec.recipe)).trace)
        ds.save_trace(d / "trace.csv", prep.trace)
        ds.save_labels(d / "labels.csv", prep.labeled.labels, prep.trace)
        (d / "normalization.json").write_text(json.dumps(prep.normalization.to_dict(), indent=1) + "\n")
        desc = prep.descriptor()
        (d / "descriptor.json").write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
        _print(args, json.dumps(desc, sort_keys=True))


def cmd_inject(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    for spec in cfg.datasets:
        d = out / spec.name
        src = Path(args.trace) if args.trace else d / "clean.csv"
        trace = ds.load_trace(_require(src, "clean trace"), 3)
        labeled = synth.clean(trace)
        classes = spec.recipe.classes if len(spec.recipe.classes) == trace.num_variables else None
        for a in spec.anomalies:
            labeled = synth.inject(labeled, a, classes)
        ds.save_trace(d / "trace.csv", labeled.trace)
        ds.save_labels(d / "labels.csv", labeled.labels, labeled.trace)
        desc = synth.describe(labeled, spec.name)
        (d / "descriptor.json").write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
        _print(args, json.dumps(desc, sort_keys=True))


def cmd_train(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    preps = {}
    for spec, cell in _cells(args, cfg):
        prep = preps.setdefault(spec.name, _prepared_from_files(out, spec))
        trained = harness.train_model(prep, cell.model, cell.lookback, cell.horizon, cell.top_k,
                                      cell.seed, cfg.training, cfg.model.emb, args.workers,
                                      cfg.model.nbeats_overrides())
        cell_dir = cell.directory(out)
        harness.save_trained(cell_dir, spec.name, trained)
        _print(args, f"trained {spec.name} {cell.model} {cell.lookback}x{cell.horizon}"
                     + (f" k={cell.top_k}" if cell.top_k is not None else "")
                     + f": {harness.parameter_total(trained)} parameters -> {cell_dir}")


def cmd_forecast(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    for spec, cell in _cells(args, cfg):
        prep = _prepared_from_files(out, spec)
        cell_dir = cell.directory(out)
        trained = _load_trained(cell_dir, spec.name, cell.model, prep.trace.variable_names)
        pred = harness.predictor(trained)
        N, dt = prep.trace.run_length, prep.trace.sample_interval_s
        ref = det.reference_forecast(pred, prep.train_rows, N, cell.lookback, cell.horizon)
        test = det.run_estimates(pred, prep.test_rows, cell.lookback, cell.horizon)
        _write_estimates(cell_dir / "forecast.csv", test, prep.trace.variable_names, dt)
        _write_estimates(cell_dir / "reference.csv", ref, prep.trace.variable_names, dt)
        _print(args, f"forecasts written to {cell_dir}")


def cmd_detect(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    for spec, cell in _cells(args, cfg):
        prep = _prepared_from_files(out, spec)
        cell_dir = cell.directory(out)
        trained = _load_trained(cell_dir, spec.name, cell.model, prep.trace.variable_names)
        report, mse = harness.evaluate_cell(prep, trained, cell.lookback, cell.horizon,
                                            cfg.b, cfg.th, cell_dir, plot_data=True)
        _print(args, f"{spec.name} {cell.model} {cell.lookback}x{cell.horizon}: "
                     f"P={report.precision:.3f} R={report.recall:.3f} F1={report.f1:.3f} "
                     f"test MSE={mse:.4g}")


def cmd_eval(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    table = harness.ResultTable()
    for spec, cell in _cells(args, cfg):
        path = _require(cell.directory(out) / "summary.json", "detection summary (run `detect` first)")
        s = json.loads(path.read_text())
        table.add(harness.ResultRow(cell.dataset, cell.model, cell.lookback, cell.horizon,
                                    cell.top_k, cell.seed, f1=s["f1"], precision=s["precision"],
                                    recall=s["recall"], test_mse=s.get("test_mse"),
                                    flagged_points=s["flagged_points"],
                                    labeled_points=s["labeled_points"]))
    table.to_csv(out / "eval.csv")
    _print(args, _table_text([r.record() for r in table.rows],
                             ("dataset", "model", "lookback", "horizon", "top_k", "f1",
                              "precision", "recall", "test_mse")))


def cmd_bench(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    table = harness.run_sweep(_plan(args, cfg, out))
    _report_table(args, table, out)


def cmd_ablate(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    ks = cfg.model.top_k if len(cfg.model.top_k) > 1 else (
        harness.PAPER_TOP_K if args.full_grid else harness.DESK_TOP_K)
    D = cfg.num_variables
    ks = tuple(k for k in ks if k <= D - 1) or (min(1, D - 1),)
    table = harness.run_sweep(_plan(args, cfg, out, model="gnn", top_k=ks))
    summary = harness.ablation_summary(table)
    harness.write_rows(out / "ablation.csv", harness.ABLATION_COLUMNS, summary)
    _report_table(args, table, out)
    _print(args, _table_text(summary, harness.ABLATION_COLUMNS))


def cmd_complexity(args, cfg: RunConfig) -> None:
    out = _out_dir(args, cfg)
    if args.nodes < 1:
        raise UsageError("--nodes must be >= 1")
    table = harness.ResultTable.load(out) if (out / "results.json").exists() else None
    # always the full grid: the table is cheap and mirrors the six published pairs
    rows = harness.complexity_report(harness.FULL_GRID, args.nodes, cfg.model.emb, table=table)
    harness.write_rows(out / "complexity.csv", harness.COMPLEXITY_COLUMNS, rows)
    _print(args, _table_text(rows, harness.COMPLEXITY_COLUMNS))


def _report_table(args, table: harness.ResultTable, out: Path) -> None:
    _print(args, _table_text([r.record() for r in table.rows],
                             ("dataset", "model", "lookback", "horizon", "top_k", "status", "f1",
                              "precision", "recall", "test_mse", "parameters")))
    failed = [r for r in table.rows if r.status != "ok"]
    for r in failed:
        log.error("cell %s/%s/%dx%d failed: %s", r.dataset, r.model, r.lookback, r.horizon, r.error)
    if any(r.status == "numeric_error" for r in failed):
        raise NumericError(f"{len(failed)} cell(s) failed; see {out / 'results.csv'}")
    if failed:
        raise DataError(f"{len(failed)} cell(s) failed; see {out / 'results.csv'}")


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("tracecast: error: a command is required")
        logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = _load(args)
        HANDLERS[args.command](args, cfg)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ds.IngestionError, CheckpointError, synth.InjectionError, ShapeError,
            FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
