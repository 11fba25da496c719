"""Experiment orchestration: window sweeps, top-K ablation and complexity tables.

A sweep is a list of cells keyed by ``(dataset, model, L, H, top_k, seed)``.
Every cell trains (or reuses) a forecaster on the dataset's first two runs,
forecasts the third, scores it against the reference forecast and writes a
report bundle under ``<out>/<dataset>/<model>/<L>x<H>[/k<top_k>]/``.

Anomalies only ever touch the test run, so datasets built from the same
recipe share their training rows. Trained models are cached by a digest of
those rows plus the model and training settings, and reused across cells.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dataset as ds
from . import detector as det
from . import graphnet, nbeats, synth
from .numcore import TrainConfig
from .numcore.tensor import NumericError

log = logging.getLogger(__name__)

FULL_GRID = ((10, 3), (20, 5), (50, 10), (100, 20), (200, 50), (500, 100))
DESK_GRID = FULL_GRID[:4]
DESK_TOP_K = (1, 3, 6)
PAPER_TOP_K = (1, 3, 6, 9, 12, 15)
MODELS = ("nbeats", "gnn")
CORPUS_SEED = 3

RESULT_COLUMNS = ("dataset", "model", "lookback", "horizon", "top_k", "seed", "status",
                  "f1", "precision", "recall", "test_mse", "parameters",
                  "flagged_points", "labeled_points", "error")
TIMING_COLUMNS = ("dataset", "model", "lookback", "horizon", "top_k", "seed",
                  "train_time_s", "test_time_s", "trained")


# ------------------------------------------------------------------ datasets

@dataclass(frozen=True)
class DatasetSpec:
    name: str
    recipe: synth.RecipeSpec
    anomalies: tuple[synth.AnomalySpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        if not self.name or "/" in self.name:
            raise ValueError(f"dataset name must be a non-empty path segment, got {self.name!r}")


@dataclass(frozen=True)
class PreparedDataset:
    name: str
    labeled: synth.LabeledTrace   # normalized, with anomalies injected into the test run
    classes: tuple[str, ...] | None = None
    raw: ds.Trace | None = None
    normalization: ds.NormalizationRecord | None = None

    @property
    def trace(self) -> ds.Trace:
        return self.labeled.trace

    @property
    def train_rows(self) -> np.ndarray:
        return ds.split(self.trace)[0]

    @property
    def test_rows(self) -> np.ndarray:
        return ds.split(self.trace)[1]

    def descriptor(self) -> dict:
        return synth.describe(self.labeled, self.name)


def prepare(spec: DatasetSpec) -> PreparedDataset:
    """Generate, normalize on the training runs, then inject (in normalized units)."""
    raw = synth.generate(spec.recipe)
    N = raw.run_length
    norm, rec = ds.fit_normalize(raw, slice(0, 2 * N))
    labeled = synth.clean(norm)
    for a in spec.anomalies:
        labeled = synth.inject(labeled, a, spec.recipe.classes)
    return PreparedDataset(spec.name, labeled, spec.recipe.classes, raw, rec)


def _edges(prep_or_trace, v: int) -> list[int]:
    return synth.detect_edges(prep_or_trace.run(2)[:, v], 0.1)


def default_recipe(seed: int = CORPUS_SEED, run_length: int = 500) -> synth.RecipeSpec:
    """The desk-scale 16-sensor recipe: 7 step-like, 5 smooth-noisy, 4 idle."""
    return synth.RecipeSpec.mixed(seed, step_like=7, smooth_noisy=5, idle=4, run_length=run_length)


def default_corpus(seed: int = CORPUS_SEED, run_length: int = 500, scored_from: int = 120,
                   target_ratio: float = 0.25, magnitude: float = 0.3) -> list[DatasetSpec]:
    """One dataset per anomaly family on a shared 16-sensor recipe.

    Segments start at ``scored_from`` or later so that they are scored at
    every desk-scale lookback. Each family attacks a different step-like
    variable and is sized toward ``target_ratio`` of the test run:

    * amplitude: +``magnitude`` over the middle 30% of the run;
    * time: the variable with the most edges in the scored part, lag grown
      until the labelled share reaches ``target_ratio``;
    * step: the longest plateau before a scored edge, shortened by up to
      ``target_ratio`` of the run.
    """
    recipe = default_recipe(seed, run_length)
    N = run_length
    norm, _ = ds.fit_normalize(synth.generate(recipe), slice(0, 2 * N))
    names = recipe.variable_names()
    steps = [i for i, c in enumerate(recipe.classes) if c == "step_like"]
    if len(steps) < 3:
        raise ValueError("default corpus needs at least three step-like variables")

    v_amp = steps[0]
    amp = synth.AnomalySpec(names[v_amp], "amplitude_shift", int(0.4 * N), int(0.7 * N),
                            magnitude=magnitude)

    def scored_edges(v):
        return [e for e in _edges(norm, v) if e >= scored_from]

    v_time = max(steps[1:], key=lambda v: (len(scored_edges(v)), -v))
    lag_spec = None
    for lag in range(1, N - scored_from):
        lag_spec = synth.AnomalySpec(names[v_time], "time_shift", scored_from, N, lag=lag)
        if synth.inject(norm, lag_spec, recipe.classes).anomaly_ratio[names[v_time]] >= target_ratio:
            break

    best = None
    for v in steps:
        if v in (v_amp, v_time):
            continue
        edges = [0] + _edges(norm, v)
        for prev, e in zip(edges[:-1], edges[1:]):
            if e - scored_from < 10:
                continue
            d = min(e - max(prev, scored_from) - 5, int(target_ratio * N))
            if best is None or d > best[0]:
                best = (d, v, e)
    if best is None:
        raise ValueError("no step-like variable has an edge suitable for a step shift")
    d, v_step, e = best
    step = synth.AnomalySpec(names[v_step], "step_shift", e - 1, e + 1, displacement=-d)

    return [DatasetSpec("amplitude", recipe, (amp,)),
            DatasetSpec("time", recipe, (lag_spec,)),
            DatasetSpec("step", recipe, (step,))]


def identity_dataset(seed: int = CORPUS_SEED, run_length: int = 500) -> PreparedDataset:
    """Default recipe whose test run is replaced by a copy of training run 1."""
    prep = prepare(DatasetSpec("identity", default_recipe(seed, run_length)))
    vals = prep.trace.values.copy()
    N = prep.trace.run_length
    vals[2 * N:] = vals[:N]
    trace = replace(prep.trace, values=vals)
    return replace(prep, labeled=synth.clean(trace))


# --------------------------------------------------------------------- plans

@dataclass(frozen=True)
class ExperimentPlan:
    datasets: tuple[DatasetSpec, ...]
    model: str
    windows: tuple[tuple[int, int], ...] = DESK_GRID
    top_k: tuple[int, ...] = (1,)
    seeds: tuple[int, ...] = (0,)
    b: int = 1
    th: float = 0.1
    out_dir: str = "runs"
    training: TrainConfig = field(default_factory=TrainConfig)
    emb: int = 128
    nbeats: dict = field(default_factory=dict)  # NBeatsConfig overrides besides L and H
    workers: int = 1
    plot_data: bool = True

    def __post_init__(self):
        for name in ("datasets", "windows", "top_k", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "windows", tuple((int(L), int(H)) for L, H in self.windows))
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        bad = [w for w in self.windows if w not in FULL_GRID]
        if bad:
            raise ValueError(f"windows {bad} are outside the supported grid {FULL_GRID}")
        if not self.datasets or not self.windows or not self.seeds:
            raise ValueError("plan needs at least one dataset, window and seed")
        if self.model == "gnn" and not self.top_k:
            raise ValueError("gnn plan needs at least one top_k")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dataset names in {names}")

    def cells(self) -> list["Cell"]:
        ks = self.top_k if self.model == "gnn" else (None,)
        return [Cell(d.name, self.model, L, H, k, s)
                for d in self.datasets for (L, H) in self.windows for k in ks for s in self.seeds]


@dataclass(frozen=True)
class Cell:
    dataset: str
    model: str
    lookback: int
    horizon: int
    top_k: int | None
    seed: int

    @property
    def key(self) -> tuple:
        return (self.dataset, self.model, self.lookback, self.horizon,
                -1 if self.top_k is None else self.top_k, self.seed)

    def directory(self, out_dir) -> Path:
        p = Path(out_dir) / self.dataset / self.model / f"{self.lookback}x{self.horizon}"
        if self.top_k is not None:
            p = p / f"k{self.top_k}"
        if self.seed != 0:
            p = p / f"seed{self.seed}"
        return p


# -------------------------------------------------------------------- results

@dataclass
class ResultRow:
    dataset: str
    model: str
    lookback: int
    horizon: int
    top_k: int | None
    seed: int
    status: str = "ok"
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    test_mse: float | None = None
    parameters: int | None = None
    flagged_points: int | None = None
    labeled_points: int | None = None
    error: str = ""
    train_time_s: float = 0.0
    test_time_s: float = 0.0
    trained: bool = False

    @property
    def cell(self) -> Cell:
        return Cell(self.dataset, self.model, self.lookback, self.horizon, self.top_k, self.seed)

    def record(self) -> dict:
        return {c: getattr(self, c) for c in RESULT_COLUMNS}

    def timing(self) -> dict:
        return {c: getattr(self, c) for c in TIMING_COLUMNS}

    @classmethod
    def from_record(cls, rec: dict, timing: dict | None = None) -> "ResultRow":
        row = cls(**{c: rec[c] for c in RESULT_COLUMNS})
        if timing:
            row.train_time_s = float(timing.get("train_time_s", 0.0))
            row.test_time_s = float(timing.get("test_time_s", 0.0))
            row.trained = str(timing.get("trained", "False")) == "True"
        return row


def _cell_text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ResultTable:
    """Rows keyed by cell. Metrics go to ``results.csv``/``results.json``.

    Wall times are hardware dependent, so they are written to a separate
    ``timings.csv``; the metric files are byte-identical across reruns.
    """

    def __init__(self, rows: Iterable[ResultRow] = ()):
        self._rows: dict[tuple, ResultRow] = {}
        for r in rows:
            self.add(r)

    def add(self, row: ResultRow) -> None:
        self._rows[row.cell.key] = row

    def get(self, cell: Cell) -> ResultRow | None:
        return self._rows.get(cell.key)

    @property
    def rows(self) -> list[ResultRow]:
        return [self._rows[k] for k in sorted(self._rows)]

    def __len__(self):
        return len(self._rows)

    def ok_rows(self) -> list[ResultRow]:
        return [r for r in self.rows if r.status == "ok"]

    def to_csv(self, path) -> Path:
        return _write_csv(path, RESULT_COLUMNS, [r.record() for r in self.rows])

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps([r.record() for r in self.rows], indent=1, sort_keys=True) + "\n")
        return path

    def timings_csv(self, path) -> Path:
        return _write_csv(path, TIMING_COLUMNS, [r.timing() for r in self.rows])

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        self.to_csv(out / "results.csv")
        self.to_json(out / "results.json")
        self.timings_csv(out / "timings.csv")

    @classmethod
    def load(cls, out_dir) -> "ResultTable":
        out = Path(out_dir)
        path = out / "results.json"
        if not path.exists():
            return cls()
        times = {}
        tpath = out / "timings.csv"
        if tpath.exists():
            with tpath.open(newline="", encoding="utf-8") as fh:
                for t in csv.DictReader(fh):
                    times[(t["dataset"], t["model"], t["lookback"], t["horizon"],
                           t["top_k"], t["seed"])] = t
        rows = []
        for rec in json.loads(path.read_text()):
            k = (rec["dataset"], rec["model"], str(rec["lookback"]), str(rec["horizon"]),
                 _cell_text(rec["top_k"]), str(rec["seed"]))
            rows.append(ResultRow.from_record(rec, times.get(k)))
        return cls(rows)


def _write_csv(path, columns, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([_cell_text(rec[c]) for c in columns])
    return path


# ------------------------------------------------------------------- training

def _train_digest(prep: PreparedDataset, model: str, L: int, H: int, top_k, seed: int,
                  training: TrainConfig, emb: int, nbeats_opts: dict) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(prep.train_rows).tobytes())
    h.update(json.dumps([model, L, H, top_k, seed, asdict(training), emb,
                         sorted(nbeats_opts.items()), list(prep.trace.variable_names)]).encode())
    return h.hexdigest()


def train_model(prep: PreparedDataset, model: str, L: int, H: int, top_k: int | None,
                seed: int, training: TrainConfig, emb: int = 128, workers: int = 1,
                nbeats_opts: dict | None = None):
    """Train on the first two runs; returns (model object, predictor)."""
    train = prep.train_rows
    batch = ds.windowize(train, L, H)
    tr, va = ds.validation_sample(batch, 0.10, seed)
    if model == "nbeats":
        cfg = nbeats.NBeatsConfig(L, H, **(nbeats_opts or {}))
        return nbeats.train_per_variable(tr, va, cfg, training, seed, prep.trace.variable_names,
                                         workers=workers)
    cfg = graphnet.GraphConfig(L, H, prep.trace.num_variables, emb=emb, top_k=top_k)
    m, _ = graphnet.train(tr, va, cfg, training, seed)
    return m


def predictor(trained):
    if isinstance(trained, list):
        return lambda x: nbeats.predict_all(trained, x)
    return trained.predict


def parameter_total(trained) -> int:
    if isinstance(trained, list):
        return int(sum(m.num_parameters() for m in trained))
    return trained.num_parameters()


def nbeats_checkpoint(cell_dir, variable: str) -> Path:
    """Per-variable checkpoint path; ``/`` in sensor names becomes ``_``."""
    return Path(cell_dir) / "checkpoints" / (variable.replace("/", "_") + ".nbeats")


def save_trained(cell_dir: Path, dataset: str, trained) -> None:
    if isinstance(trained, list):
        for m in trained:
            nbeats.save_model(nbeats_checkpoint(cell_dir, m.variable), m)
    else:
        graphnet.save_model(cell_dir / f"{dataset}.gnn", trained)


# ------------------------------------------------------------------ evaluation

def evaluate_cell(prep: PreparedDataset, trained, L: int, H: int, b: int, th: float,
                  cell_dir: Path | None = None, plot_data: bool = False) -> tuple[det.DetectionReport, float]:
    """Detect on the test run; returns (report, Eq. 9 test MSE)."""
    pred = predictor(trained)
    N = prep.trace.run_length
    train, test = prep.train_rows, prep.test_rows
    ref = det.reference_forecast(pred, train, N, L, H)
    fs = det.forecast_run(pred, test, L, H)
    est = det.aggregate(fs)
    report = det.score(est, ref, b, th, prep.labeled.test_labels())
    tw = ds.windowize(test, L, H)
    test_mse = det.mse_loss(fs.forecasts, tw.targets)
    report.metadata.update({"lookback": L, "horizon": H, "test_mse": test_mse})
    if cell_dir is not None:
        names = prep.trace.variable_names
        report.to_csv(cell_dir / "report.csv", names, prep.trace.sample_interval_s,
                      2 * N * prep.trace.sample_interval_s)
        report.write_summary(cell_dir / "summary.json")
        if plot_data:
            det.write_plot_data(cell_dir / "plot", names, test, est, ref, report,
                                prep.trace.sample_interval_s)
        if not isinstance(trained, list):
            graphnet.export_edges(cell_dir / "edges.csv", trained, names)
    return report, test_mse


def _run_group(args) -> list[ResultRow]:
    """Train once for a group of cells that share training rows, evaluate each."""
    plan, group, preps = args
    first = group[0]
    rows = []
    t0 = time.perf_counter()
    try:
        trained = train_model(preps[first.dataset], plan.model, first.lookback, first.horizon,
                              first.top_k, first.seed, plan.training, plan.emb,
                              nbeats_opts=plan.nbeats)
    except Exception as exc:  # recorded per cell, the sweep goes on
        status = "numeric_error" if isinstance(exc, (NumericError, FloatingPointError)) else "error"
        log.warning("training failed for %s: %s", first, exc)
        return [ResultRow(*_cell_fields(c), status=status, error=str(exc)) for c in group]
    train_time = time.perf_counter() - t0
    for i, c in enumerate(group):
        cell_dir = c.directory(plan.out_dir)
        try:
            t1 = time.perf_counter()
            report, mse = evaluate_cell(preps[c.dataset], trained, c.lookback, c.horizon,
                                        plan.b, plan.th, cell_dir, plan.plot_data)
            test_time = time.perf_counter() - t1
            save_trained(cell_dir, c.dataset, trained)
            s = report.summary()
            rows.append(ResultRow(*_cell_fields(c), f1=report.f1, precision=report.precision,
                                  recall=report.recall, test_mse=mse,
                                  parameters=parameter_total(trained),
                                  flagged_points=s["flagged_points"],
                                  labeled_points=s["labeled_points"],
                                  train_time_s=train_time if i == 0 else 0.0,
                                  test_time_s=test_time, trained=i == 0))
        except Exception as exc:
            log.warning("evaluation failed for %s: %s", c, exc)
            rows.append(ResultRow(*_cell_fields(c), status="error", error=str(exc)))
    return rows


def _cell_fields(c: Cell) -> tuple:
    return (c.dataset, c.model, c.lookback, c.horizon, c.top_k, c.seed)


def run_sweep(plan: ExperimentPlan, resume: bool = True) -> ResultTable:
    """Run every cell of ``plan``; completed cells found on disk are not redone.

    The table is rewritten after every training group, so an interrupted
    sweep can be resumed by calling this again with the same plan.
    """
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = ResultTable.load(out) if resume else ResultTable()
    preps = {d.name: prepare(d) for d in plan.datasets}
    for name, p in preps.items():
        (out / name).mkdir(parents=True, exist_ok=True)
        (out / name / "descriptor.json").write_text(
            json.dumps(p.descriptor(), indent=2, sort_keys=True) + "\n")

    todo = [c for c in plan.cells()
            if not (resume and (r := table.get(c)) is not None and r.status == "ok")]
    groups: dict[str, list[Cell]] = {}
    for c in todo:
        digest = _train_digest(preps[c.dataset], c.model, c.lookback, c.horizon, c.top_k,
                               c.seed, plan.training, plan.emb, plan.nbeats)
        groups.setdefault(digest, []).append(c)
    jobs = [(plan, g, {c.dataset: preps[c.dataset] for c in g}) for g in groups.values()]
    log.info("%d cells, %d to run in %d training groups", len(plan.cells()), len(todo), len(jobs))

    def collect(rows):
        for r in rows:
            table.add(r)
            log.info("%s %s %dx%d k=%s: %s f1=%s", r.dataset, r.model, r.lookback, r.horizon,
                     r.top_k, r.status, r.f1)
        table.save(out)

    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            for rows in pool.map(_run_group, jobs):
                collect(rows)
    else:
        for job in jobs:
            collect(_run_group(job))
    table.save(out)
    return table


# ------------------------------------------------------------------ summaries

ABLATION_COLUMNS = ("top_k", "lookback", "horizon", "count", "f1", "precision", "recall", "test_mse")


def ablation_summary(table: ResultTable) -> list[dict]:
    """Mean metrics per (top_k, window) over datasets; failed cells are left out and counted."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in table.rows:
        if r.model != "gnn":
            continue
        groups.setdefault((r.top_k, r.lookback, r.horizon), [])
        if r.status == "ok":
            groups[(r.top_k, r.lookback, r.horizon)].append(r)
    out = []
    for (k, L, H), rows in sorted(groups.items()):
        rec = {"top_k": k, "lookback": L, "horizon": H, "count": len(rows)}
        for m in ("f1", "precision", "recall", "test_mse"):
            rec[m] = float(np.mean([getattr(r, m) for r in rows])) if rows else None
        out.append(rec)
    return out


def write_rows(path, columns: Sequence[str], records: Sequence[dict]) -> Path:
    return _write_csv(path, columns, records)


COMPLEXITY_COLUMNS = ("lookback", "horizon", "nbeats_per_variable", "nbeats_total", "gnn",
                      "ratio", "nbeats_train_s", "nbeats_test_s", "gnn_train_s", "gnn_test_s")


def complexity_report(windows: Sequence[tuple[int, int]] = FULL_GRID, num_nodes: int = 131,
                      emb: int = 128, top_k: int = 1, table: ResultTable | None = None) -> list[dict]:
    """Parameter counts per window, plus mean wall times when a result table is given.

    ``ratio`` is the N-BEATS per-variable count over the GNN total.
    """
    rows = []
    for L, H in windows:
        per_var = nbeats.parameter_count(nbeats.NBeatsConfig(L, H))
        gcfg = graphnet.GraphConfig(L, H, num_nodes, emb=emb, top_k=min(top_k, max(num_nodes - 1, 0)))
        g = graphnet.count_parameters(gcfg)
        rec = {"lookback": L, "horizon": H, "nbeats_per_variable": per_var,
               "nbeats_total": per_var * num_nodes, "gnn": g, "ratio": per_var / g}
        for model in MODELS:
            trained = [r for r in (table.ok_rows() if table else [])
                       if r.model == model and (r.lookback, r.horizon) == (L, H)]
            fit = [r.train_time_s for r in trained if r.trained]
            rec[f"{model}_train_s"] = float(np.mean(fit)) if fit else None
            rec[f"{model}_test_s"] = float(np.mean([r.test_time_s for r in trained])) if trained else None
        rows.append(rec)
    return rows
