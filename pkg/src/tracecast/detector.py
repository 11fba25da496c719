"""From multi-step forecasts to per-time-point anomaly flags.

Every origin ``t`` forecasts rows ``t .. t+H-1`` (0-based) of its run, so a
row is forecast up to ``H`` times at leads ``1..H``. Those forecasts are
averaged uniformly into one estimate. The same pipeline is run on the two
training runs to get a reference estimate at each in-run offset; the test
estimate's per-variable absolute deviation from that reference is scored by
its top-``b`` mean and flagged above ``th``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import windowize

Predictor = Callable[[np.ndarray], np.ndarray]  # (B, D, L) -> (B, D, H)


@dataclass(frozen=True)
class ForecastSet:
    forecasts: np.ndarray  # (n_origins, D, H)
    origins: np.ndarray    # slice-end origins t; lead h forecasts row t + h - 1
    num_rows: int

    @property
    def horizon(self) -> int:
        return self.forecasts.shape[2]

    def coverage(self) -> dict[int, list[tuple[int, int]]]:
        """Row -> list of (origin, lead) pairs that forecast it."""
        cov: dict[int, list[tuple[int, int]]] = {}
        for t in self.origins:
            for h in range(1, self.horizon + 1):
                row = int(t) + h - 1
                if row < self.num_rows:
                    cov.setdefault(row, []).append((int(t), h))
        return cov


@dataclass(frozen=True)
class Estimates:
    values: np.ndarray    # (num_rows, D); NaN where nothing was forecast
    coverage: np.ndarray  # (num_rows,) number of forecasts averaged per row

    @property
    def covered(self) -> np.ndarray:
        return self.coverage > 0


class ForecastAggregator:
    """Streaming uniform average of overlapping forecasts.

    Origins must be pushed in increasing order. After pushing origin ``t`` no
    later origin can reach rows ``<= t``, so those rows are final and returned.
    """

    def __init__(self, num_rows: int, num_vars: int):
        self.num_rows = num_rows
        self.sums = np.zeros((num_rows, num_vars))
        self.counts = np.zeros(num_rows, dtype=np.int64)
        self._emitted = 0
        self._last = -1

    def push(self, origin: int, forecast: np.ndarray) -> list[tuple[int, np.ndarray]]:
        if origin <= self._last:
            raise ValueError(f"origin {origin} pushed after {self._last}")
        self._last = origin
        for h in range(forecast.shape[1]):
            row = origin + h
            if row < self.num_rows:
                self.sums[row] += forecast[:, h]
                self.counts[row] += 1
        return self._emit(min(origin + 1, self.num_rows))

    def flush(self) -> list[tuple[int, np.ndarray]]:
        return self._emit(self.num_rows)

    def _emit(self, upto: int) -> list[tuple[int, np.ndarray]]:
        out = []
        for row in range(self._emitted, upto):
            if self.counts[row]:
                out.append((row, self.sums[row] / self.counts[row]))
        self._emitted = max(self._emitted, upto)
        return out

    def estimates(self) -> Estimates:
        vals = np.full(self.sums.shape, np.nan)
        has = self.counts > 0
        vals[has] = self.sums[has] / self.counts[has, None]
        return Estimates(vals, self.counts.copy())


def aggregate(fs: ForecastSet) -> Estimates:
    agg = ForecastAggregator(fs.num_rows, fs.forecasts.shape[1])
    for t, f in zip(fs.origins, fs.forecasts):
        agg.push(int(t), f)
    return agg.estimates()


def forecast_run(predict: Predictor, run_rows: np.ndarray, lookback: int, horizon: int,
                 chunk: int = 512) -> ForecastSet:
    batch = windowize(run_rows, lookback, horizon)
    parts = [predict(batch.inputs[i:i + chunk]) for i in range(0, len(batch), chunk)]
    return ForecastSet(np.concatenate(parts), batch.origins, run_rows.shape[0])


def run_estimates(predict: Predictor, run_rows: np.ndarray, lookback: int, horizon: int) -> Estimates:
    return aggregate(forecast_run(predict, run_rows, lookback, horizon))


def reference_forecast(predict: Predictor, train_rows: np.ndarray, run_length: int,
                       lookback: int, horizon: int) -> Estimates:
    """Average, at each in-run offset, the estimates of every training run."""
    runs = [run_estimates(predict, train_rows[k:k + run_length], lookback, horizon)
            for k in range(0, train_rows.shape[0], run_length)]
    vals = np.mean(np.stack([r.values for r in runs]), axis=0)
    return Estimates(vals, runs[0].coverage)


def topb_mean(errors: np.ndarray, b: int) -> np.ndarray:
    b = max(1, min(b, errors.shape[1]))
    part = np.sort(errors, axis=1)[:, ::-1][:, :b]
    return part.mean(axis=1)


def evaluate(flags, labels) -> tuple[float, float, float]:
    """Point-wise precision, recall and F1 (0 on a zero denominator)."""
    f = np.asarray(flags, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    tp = int(np.sum(f & y))
    fp = int(np.sum(f & ~y))
    fn = int(np.sum(~f & y))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def mse_loss(forecasts: np.ndarray, targets: np.ndarray) -> float:
    """Mean over origins of the squared L2 norm of each flattened D x H error."""
    forecasts = np.asarray(forecasts, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if forecasts.shape != targets.shape:
        raise ValueError(f"forecast shape {forecasts.shape} != target shape {targets.shape}")
    n = forecasts.shape[0]
    err = (forecasts - targets).reshape(n, -1)
    return float(np.sum(err * err) / n)


@dataclass
class DetectionReport:
    rows: np.ndarray         # test-run row index of each scored point
    deviations: np.ndarray   # (T, D)
    scores: np.ndarray
    flags: np.ndarray
    labels: np.ndarray | None
    argmax_variable: np.ndarray
    b: int
    th: float
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    metadata: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "b": self.b, "th": self.th, "scored_points": int(len(self.rows)),
            "flagged_points": int(self.flags.sum()),
            "labeled_points": int(self.labels.sum()) if self.labels is not None else None,
            **self.metadata,
        }

    def to_csv(self, path, names, sample_interval_s: float = 0.1, time_offset: float = 0.0) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "score", "flag", "label", "argmax_variable", *names])
            for i, row in enumerate(self.rows):
                label = int(self.labels[i]) if self.labels is not None else ""
                w.writerow([repr(time_offset + row * sample_interval_s), repr(float(self.scores[i])),
                            int(self.flags[i]), label, names[self.argmax_variable[i]],
                            *(repr(float(v)) for v in self.deviations[i])])
        return path

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def score(test: Estimates, reference: Estimates, b: int = 1, th: float = 0.1,
          labels=None) -> DetectionReport:
    """Score covered rows by the top-``b`` mean absolute deviation and flag above ``th``.

    ``labels`` is the global per-row label of the test run (length = rows).
    """
    if test.values.shape != reference.values.shape:
        raise ValueError(f"misaligned estimates: {test.values.shape} vs {reference.values.shape}")
    rows = np.flatnonzero(test.covered & reference.covered)
    dev = np.abs(test.values[rows] - reference.values[rows])
    s = topb_mean(dev, b)
    flags = s > th
    lab = None
    p = r = f1 = 0.0
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != test.values.shape[0]:
            raise ValueError(f"{labels.shape[0]} labels for {test.values.shape[0]} rows")
        lab = labels[rows].astype(np.int8)
        p, r, f1 = evaluate(flags, lab)
    return DetectionReport(rows, dev, s, flags, lab, np.argmax(dev, axis=1), b, th, p, r, f1,
                           {"partial_coverage_rows": "included, averaged over available forecasts"})


def write_plot_data(out_dir, names, truth: np.ndarray, test: Estimates, reference: Estimates,
                    report: DetectionReport, sample_interval_s: float = 0.1) -> list[Path]:
    """One CSV per variable: time, truth, test forecast, reference forecast, flag."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flag = np.zeros(truth.shape[0], dtype=int)
    flag[report.rows[report.flags]] = 1
    paths = []
    for d, name in enumerate(names):
        p = out_dir / (name.replace("/", "_") + ".csv")
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "truth", "test_forecast", "reference_forecast", "flag"])
            for n in range(truth.shape[0]):
                tv, rv = test.values[n, d], reference.values[n, d]
                w.writerow([repr(n * sample_interval_s), repr(float(truth[n, d])),
                            "" if np.isnan(tv) else repr(float(tv)),
                            "" if np.isnan(rv) else repr(float(rv)), flag[n]])
        paths.append(p)
    return paths
