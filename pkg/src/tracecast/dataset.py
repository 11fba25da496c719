"""Trace ingestion, min-max normalization, run split and window cutting.

Window origins follow the forecasting convention ``X[t+1:t+H] = f(X[t-L+1:t])``
with 1-based ``t``; in Python slicing terms an origin ``t`` is the end of the
lookback slice, so ``inputs = rows[t-L:t]`` and ``targets = rows[t:t+H]``.
The first origin is ``t = L`` and the last is ``t = M' - H``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class Trace:
    values: np.ndarray  # (M, D)
    variable_names: tuple[str, ...]
    sample_interval_s: float
    run_length: int
    run_count: int

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"trace values must be 2-D, got shape {self.values.shape}")
        M, D = self.values.shape
        if M != self.run_length * self.run_count:
            raise ValueError(f"{M} rows != run_count {self.run_count} x run_length {self.run_length}")
        if len(self.variable_names) != D:
            raise ValueError(f"{len(self.variable_names)} names for {D} columns")
        if len(set(self.variable_names)) != D:
            raise ValueError("variable names must be unique")

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    def run(self, k: int) -> np.ndarray:
        """Rows of run ``k`` (0-based)."""
        N = self.run_length
        return self.values[k * N:(k + 1) * N]

    def column(self, name: str) -> int:
        return self.variable_names.index(name)


@dataclass(frozen=True)
class NormalizationRecord:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        out = np.zeros_like(values, dtype=np.float64)
        live = span > 0
        out[:, live] = (values[:, live] - self.minimum[live]) / span[live]
        return out

    def invert(self, values: np.ndarray) -> np.ndarray:
        span = self.maximum - self.minimum
        return values * span + self.minimum

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRecord":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


@dataclass(frozen=True)
class WindowBatch:
    inputs: np.ndarray   # (B, D, L)
    targets: np.ndarray  # (B, D, H)
    origins: np.ndarray  # (B,)

    def __len__(self):
        return len(self.origins)

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.inputs[idx], self.targets[idx], self.origins[idx])


def load_trace(path, expected_runs: int) -> Trace:
    """Read a trace CSV: a ``time`` column, then one column per variable."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "time":
        raise IngestionError(f"{path}: header must start with 'time' and name at least one variable")
    body = rows[1:]
    width = len(header)
    data = np.empty((len(body), width), dtype=np.float64)
    for i, row in enumerate(body):
        if len(row) != width:
            raise IngestionError(f"{path}: row {i + 2} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise IngestionError(f"{path}: missing value at row {i + 2}, column {header[j]!r}")
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2}, column {header[j]!r}") from None
            if not math.isfinite(data[i, j]):
                raise IngestionError(f"{path}: non-finite value at row {i + 2}, column {header[j]!r}")
    M = len(body)
    if expected_runs < 1 or M == 0 or M % expected_runs:
        raise IngestionError(f"{path}: {M} rows cannot be split into {expected_runs} equal runs")
    interval = float(data[1, 0] - data[0, 0]) if M > 1 else 0.1
    return Trace(data[:, 1:].copy(), tuple(header[1:]), interval, M // expected_runs, expected_runs)


def save_trace(path, trace: Trace) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = np.arange(trace.values.shape[0]) * trace.sample_interval_s
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", *trace.variable_names])
        for t, row in zip(times, trace.values):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    return path


def save_labels(path, labels: np.ndarray, trace: Trace) -> Path:
    return save_trace(path, replace(trace, values=labels.astype(np.float64)))


def load_labels(path, expected_runs: int) -> np.ndarray:
    lab = load_trace(path, expected_runs).values
    if not np.isin(lab, (0.0, 1.0)).all():
        raise IngestionError(f"{path}: label cells must be 0 or 1")
    return lab.astype(np.int8)


def fit_normalize(trace: Trace, fit_rows) -> tuple[Trace, NormalizationRecord]:
    """Min-max scale each variable using statistics from ``fit_rows`` only.

    Constant variables map to 0. Rows outside ``fit_rows`` may leave [0, 1].
    """
    fit = trace.values[fit_rows]
    if fit.shape[0] == 0:
        raise ValueError("fit_rows selects no rows")
    rec = NormalizationRecord(fit.min(axis=0), fit.max(axis=0))
    return replace(trace, values=rec.apply(trace.values)), rec


def split(trace: Trace) -> tuple[np.ndarray, np.ndarray]:
    """First two runs for training, the third for testing."""
    if trace.run_count != 3:
        raise ValueError(f"split needs a 3-run trace, got {trace.run_count} runs")
    N = trace.run_length
    return trace.values[:2 * N], trace.values[2 * N:]


def windowize(rows: np.ndarray, lookback: int, horizon: int) -> WindowBatch:
    """All (lookback, horizon) pairs inside ``rows``; origins ``t = L .. M'-H``."""
    if lookback < 1 or horizon < 1:
        raise ValueError(f"lookback and horizon must be >= 1, got {lookback}, {horizon}")
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[:, None]
    M = rows.shape[0]
    if M < lookback + horizon:
        raise ValueError(f"empty batch: {M} rows < lookback {lookback} + horizon {horizon}")
    origins = np.arange(lookback, M - horizon + 1)
    span = np.lib.stride_tricks.sliding_window_view(rows, lookback + horizon, axis=0)
    # span: (M-L-H+1, D, L+H)
    return WindowBatch(np.ascontiguousarray(span[:, :, :lookback]),
                       np.ascontiguousarray(span[:, :, lookback:]), origins)


def validation_sample(batch: WindowBatch, fraction: float = 0.10,
                      seed: int = 0) -> tuple[WindowBatch, WindowBatch]:
    """Hold out ``round(fraction * B)`` windows, drawn without replacement."""
    B = len(batch)
    if B == 0:
        raise ValueError("cannot sample a validation set from an empty batch")
    n_val = int(math.floor(fraction * B + 0.5))
    perm = np.random.default_rng(seed).permutation(B)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return batch.subset(train_idx), batch.subset(val_idx)


def runs_windows(rows: np.ndarray, run_length: int, lookback: int, horizon: int) -> list[WindowBatch]:
    """Windowize each run of ``rows`` on its own so no pair straddles a run seam."""
    return [windowize(rows[k:k + run_length], lookback, horizon)
            for k in range(0, rows.shape[0], run_length)]


def concat_batches(batches: Sequence[WindowBatch]) -> WindowBatch:
    return WindowBatch(np.concatenate([b.inputs for b in batches]),
                       np.concatenate([b.targets for b in batches]),
                       np.concatenate([b.origins for b in batches]))
