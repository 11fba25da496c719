"""Synthetic recipe traces and labelled anomaly injection.

Variables come in three behaviours: ``step_like`` (piecewise constant, like
valve states or set-points), ``smooth_noisy`` (logistic ramps plus Gaussian
noise, like pressures or temperatures) and ``idle`` (constant). Every run
replays the same schedule, optionally with per-run edge jitter.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Trace

CLASSES = ("step_like", "smooth_noisy", "idle")
CATEGORIES = ("amplitude_shift", "time_shift", "step_shift")
_CATEGORY_NAMES = {"amplitude_shift": "Amplitude", "time_shift": "Time", "step_shift": "Step"}
LABEL_TOLERANCE = 1e-6


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class RecipeSpec:
    seed: int
    classes: tuple[str, ...]
    run_length: int = 500
    run_count: int = 3
    noise_sigma: float = 0.02
    jitter: int = 0
    sample_interval_s: float = 0.1
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        bad = [c for c in self.classes if c not in CLASSES]
        if bad:
            raise ValueError(f"unknown variable classes {bad}; expected one of {CLASSES}")
        if not self.classes:
            raise ValueError("recipe needs at least one variable")
        if self.run_length < 20:
            raise ValueError(f"run_length must be >= 20, got {self.run_length}")
        if self.run_count < 1 or self.jitter < 0 or self.noise_sigma < 0:
            raise ValueError("run_count >= 1, jitter >= 0 and noise_sigma >= 0 required")
        if self.names is not None and len(self.names) != len(self.classes):
            raise ValueError("names and classes differ in length")

    @classmethod
    def mixed(cls, seed: int, step_like: int, smooth_noisy: int, idle: int, **kw) -> "RecipeSpec":
        """Spec with the given number of variables per class, interleaved deterministically."""
        pool = ["step_like"] * step_like + ["smooth_noisy"] * smooth_noisy + ["idle"] * idle
        order = np.random.default_rng(seed + 7919).permutation(len(pool))
        return cls(seed=seed, classes=tuple(pool[i] for i in order), **kw)

    def variable_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return tuple(self.names)
        return tuple(f"Hardware{i // 4:02d}/Variable{i:02d}" for i in range(len(self.classes)))


@dataclass(frozen=True)
class AnomalySpec:
    variable: str
    category: str
    start: int  # test-run coordinates, half open [start, stop)
    stop: int
    magnitude: float | None = None     # amplitude_shift
    lag: int | None = None             # time_shift; positive delays, negative advances
    displacement: int | None = None    # step_shift; signed edge move in samples
    edge_threshold: float = 0.1
    label_tolerance: float = LABEL_TOLERANCE

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown anomaly category {self.category!r}")
        given = {"amplitude_shift": self.magnitude, "time_shift": self.lag,
                 "step_shift": self.displacement}
        populated = [k for k, v in given.items() if v is not None]
        if populated != [self.category]:
            raise ValueError(f"{self.category} needs exactly its own parameter set, got {populated}")
        if not 0 <= self.start < self.stop:
            raise ValueError(f"bad segment [{self.start}, {self.stop})")


@dataclass(frozen=True)
class LabeledTrace:
    trace: Trace
    labels: np.ndarray  # (M, D) of {0, 1}
    anomaly_ratio: dict[str, float] = field(default_factory=dict)
    injected: tuple[tuple[str, str], ...] = ()  # (variable, category) in injection order

    def test_labels(self) -> np.ndarray:
        """Global a(t) over the test run: OR across variables."""
        N = self.trace.run_length
        return self.labels[-N:].any(axis=1).astype(np.int8)


# ------------------------------------------------------------------ generation

def _cut_points(rng, n_pieces: int, N: int, min_gap: int) -> np.ndarray:
    for _ in range(1000):
        cuts = np.sort(rng.choice(np.arange(min_gap, N - min_gap + 1), n_pieces - 1, replace=False))
        if np.all(np.diff(cuts) >= min_gap):
            return cuts
    return np.linspace(0, N, n_pieces + 1).astype(int)[1:-1]


def _levels(rng, n: int, min_step: float = 0.2) -> np.ndarray:
    lv = [rng.uniform(0.0, 1.0)]
    while len(lv) < n:
        x = rng.uniform(0.0, 1.0)
        if abs(x - lv[-1]) >= min_step:
            lv.append(x)
    return np.asarray(lv)


def _jittered(rng, points: np.ndarray, jitter: int, lo: int, hi: int) -> np.ndarray:
    if jitter == 0:
        return points
    return np.clip(points + rng.integers(-jitter, jitter + 1, size=len(points)), lo, hi)


def generate(spec: RecipeSpec) -> Trace:
    rng = np.random.default_rng(spec.seed)
    N, R = spec.run_length, spec.run_count
    t = np.arange(N, dtype=np.float64)
    cols = []
    for cls in spec.classes:
        col = np.empty(N * R)
        if cls == "step_like":
            n = int(rng.integers(3, 9))
            cuts = _cut_points(rng, n, N, max(3, N // 25))
            levels = _levels(rng, n)
            for k in range(R):
                c = _jittered(rng, cuts, spec.jitter, 1, N - 1)
                col[k * N:(k + 1) * N] = levels[np.searchsorted(c, t, side="right")]
        elif cls == "smooth_noisy":
            n = int(rng.integers(2, 5))
            base = rng.uniform(0.2, 0.8)
            amps = rng.uniform(-0.5, 0.5, n)
            centers = rng.uniform(0.1 * N, 0.9 * N, n)
            widths = rng.uniform(N / 100, N / 20, n)
            for k in range(R):
                c = _jittered(rng, centers, spec.jitter, 0, N)
                ramps = amps[:, None] / (1.0 + np.exp(-(t[None, :] - c[:, None]) / widths[:, None]))
                col[k * N:(k + 1) * N] = base + ramps.sum(axis=0) + rng.normal(0.0, spec.noise_sigma, N)
        else:
            col[:] = rng.uniform(0.0, 1.0)
        cols.append(col)
    return Trace(np.stack(cols, axis=1), spec.variable_names(), spec.sample_interval_s, N, R)


# ------------------------------------------------------------------- injection

def detect_edges(column, edge_threshold: float) -> list[int]:
    """Indices ``n`` whose value jumps from ``column[n-1]`` by more than the threshold.

    The returned index is the first sample of the new level, so ``[0, 0, 1, 1]``
    gives ``[2]``.
    """
    x = np.asarray(column, dtype=np.float64)
    if x.size < 2:
        raise ValueError("detect_edges needs at least two samples")
    return [int(i) + 1 for i in np.flatnonzero(np.abs(np.diff(x)) > edge_threshold)]


def classify_column(column, tol: float = 1e-12, max_change_fraction: float = 0.05) -> str:
    """Guess the behaviour class of a column from how often it changes value."""
    x = np.asarray(column, dtype=np.float64)
    changes = np.count_nonzero(np.abs(np.diff(x)) > tol)
    if changes == 0:
        return "idle"
    if changes <= max_change_fraction * (x.size - 1):
        return "step_like"
    return "smooth_noisy"


def _shift_step(col: np.ndarray, spec: AnomalySpec) -> np.ndarray:
    stop = min(spec.stop, col.size)
    edges = [e for e in detect_edges(col, spec.edge_threshold) if spec.start <= e < stop]
    if not edges:
        raise InjectionError(f"no plateau edge of {spec.variable!r} inside "
                             f"[{spec.start}, {spec.stop})")
    mid = (spec.start + stop) / 2.0
    e = min(edges, key=lambda i: (abs(i - mid), i))
    out = col.copy()
    d = spec.displacement
    if d < 0:
        out[max(e + d, 0):e] = col[e]
    elif d > 0:
        out[e:min(e + d, col.size)] = col[e - 1]
    return out


def inject(data: Trace | LabeledTrace, spec: AnomalySpec, classes: Sequence[str] | None = None
           ) -> LabeledTrace:
    """Apply one anomaly to the test (last) run of ``data`` and label it.

    Accepts a previous :class:`LabeledTrace` so several anomalies can be
    stacked; labels accumulate by OR.
    """
    if isinstance(data, LabeledTrace):
        trace, labels = data.trace, data.labels.copy()
        ratios, injected = dict(data.anomaly_ratio), data.injected
    else:
        trace, labels = data, np.zeros(data.values.shape, dtype=np.int8)
        ratios, injected = {}, ()
    if spec.variable not in trace.variable_names:
        raise InjectionError(f"unknown variable {spec.variable!r}")
    d = trace.column(spec.variable)
    N = trace.run_length
    if spec.stop > N:
        raise InjectionError(f"segment [{spec.start}, {spec.stop}) exceeds the test run of {N} samples")
    off = (trace.run_count - 1) * N
    col = trace.values[off:off + N, d].copy()
    cls = classes[d] if classes is not None else classify_column(trace.run(0)[:, d])
    if cls != "step_like":
        raise InjectionError(f"{spec.variable!r} is {cls}; anomalies target step_like variables")

    new = col.copy()
    seg = slice(spec.start, spec.stop)
    if spec.category == "amplitude_shift":
        new[seg] = col[seg] + spec.magnitude
    elif spec.category == "time_shift":
        src = np.clip(np.arange(spec.start, spec.stop) - spec.lag, 0, N - 1)
        new[seg] = col[src]
    else:
        new = _shift_step(col, spec)

    values = trace.values.copy()
    values[off:off + N, d] = new
    hit = np.abs(new - col) > spec.label_tolerance
    labels[off:off + N, d] |= hit.astype(np.int8)
    ratios[spec.variable] = float(labels[off:off + N, d].mean())
    return LabeledTrace(replace(trace, values=values), labels, ratios,
                        injected + ((spec.variable, spec.category),))


def category_label(categories: Sequence[str]) -> str:
    uniq = list(dict.fromkeys(categories))
    if not uniq:
        return ""
    names = [_CATEGORY_NAMES[c] for c in uniq]
    return " + ".join(names) + (" shift" if len(names) == 1 else " shifts")


def describe(labeled: LabeledTrace, name: str = "") -> dict:
    """Dataset descriptor row: variables, attacked variables, category, anomaly ratio."""
    attacked = list(dict.fromkeys(v for v, _ in labeled.injected))
    N = labeled.trace.run_length
    ratio = float(labeled.test_labels().mean()) if N else 0.0
    return {
        "dataset": name,
        "variables": labeled.trace.num_variables,
        "attacked_variables": len(attacked),
        "anomaly_category": category_label([c for _, c in labeled.injected]),
        "anomaly_ratio": ratio,
        "anomaly_ratio_pct": f"{round(100 * ratio)}%",
    }


def clean(trace: Trace) -> LabeledTrace:
    return LabeledTrace(trace, np.zeros(trace.values.shape, dtype=np.int8))
