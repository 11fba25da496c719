"""Run configuration: strict JSON validation with defaults filled in.

Every violation is collected with a JSON-path locator (``model.top_k``,
``dataset.anomalies[1].lag``) and reported together; nothing is partially
accepted.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import harness, synth
from .numcore import TrainConfig

DEFAULT_TRAINING = {"epochs": 1000, "patience": 100, "batch": 32, "lr": 0.001,
                    "plateau": {"factor": 0.5, "patience": 5}}
DEFAULT_DETECTION = {"b": 1, "th": 0.1}
NBEATS_DEFAULTS = {"num_stacks": 2, "blocks_per_stack": 2, "basis_dim": 4, "hidden_width": 128,
                   "fc_layers": 4}
GNN_DEFAULTS = {"emb": 128, "top_k": 1, "head_layers": 1}
RECIPE_KEYS = {"seed", "classes", "counts", "run_length", "run_count", "noise_sigma", "jitter",
               "sample_interval_s", "names"}
ANOMALY_KEYS = {"variable", "category", "start", "stop", "magnitude", "lag", "displacement",
                "edge_threshold", "label_tolerance"}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class ModelSettings:
    kind: str = "nbeats"
    nbeats: dict = field(default_factory=lambda: dict(NBEATS_DEFAULTS))
    emb: int = 128
    top_k: tuple[int, ...] = (1,)
    head_layers: int = 1

    def nbeats_overrides(self) -> dict:
        return {k: v for k, v in self.nbeats.items() if NBEATS_DEFAULTS.get(k) != v}


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[harness.DatasetSpec, ...]
    model: ModelSettings
    training: TrainConfig
    b: int = 1
    th: float = 0.1
    windows: tuple[tuple[int, int], ...] = harness.DESK_GRID
    seed: int = 0
    out_dir: str | None = None

    @property
    def num_variables(self) -> int:
        return len(self.datasets[0].recipe.classes)

    def plan(self, out_dir: str, windows=None, workers: int = 1, model: str | None = None,
             top_k=None) -> harness.ExperimentPlan:
        return harness.ExperimentPlan(
            datasets=self.datasets, model=model or self.model.kind,
            windows=windows or self.windows, top_k=top_k or self.model.top_k,
            seeds=(self.seed,), b=self.b, th=self.th, out_dir=str(out_dir),
            training=self.training, emb=self.model.emb, nbeats=self.model.nbeats_overrides(),
            workers=workers)

    def to_dict(self) -> dict:
        return {
            "datasets": [{"name": d.name, "recipe": _recipe_dict(d.recipe),
                          "anomalies": [asdict(a) for a in d.anomalies]} for d in self.datasets],
            "model": asdict(self.model), "training": asdict(self.training),
            "detection": {"b": self.b, "th": self.th},
            "windows": [list(w) for w in self.windows], "seed": self.seed, "out_dir": self.out_dir,
        }


def _recipe_dict(r: synth.RecipeSpec) -> dict:
    d = asdict(r)
    d["classes"] = list(r.classes)
    d["names"] = list(r.names) if r.names else None
    return d


class _Checker:
    def __init__(self):
        self.errors: list[str] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def obj(self, value, path: str, allowed: set[str]) -> dict:
        if not isinstance(value, dict):
            self.err(path, f"expected an object, got {type(value).__name__}")
            return {}
        for k in sorted(set(value) - allowed):
            self.err(_join(path, k), "unknown key")
        return value

    def int_(self, d: dict, key: str, path: str, default, lo=None, hi=None):
        p = _join(path, key)
        v = d.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            self.err(p, f"expected an integer, got {v!r}")
            return default
        if lo is not None and v < lo:
            self.err(p, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            self.err(p, f"must be <= {hi}, got {v}")
        return v

    def num(self, d: dict, key: str, path: str, default, lo=None, hi=None, open_lo=False):
        p = _join(path, key)
        v = d.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.err(p, f"expected a finite number, got {v!r}")
            return default
        if lo is not None and (v <= lo if open_lo else v < lo):
            self.err(p, f"must be {'>' if open_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.err(p, f"must be <= {hi}, got {v}")
        return float(v)


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else key


TOP_KEYS = {"dataset", "model", "training", "detection", "windows", "seed", "out_dir"}


def validate_config(doc: Any) -> RunConfig:
    """Validate a parsed JSON document; raises :class:`ConfigError` listing every problem."""
    c = _Checker()
    doc = c.obj(doc, "", TOP_KEYS)
    if "dataset" not in doc:
        c.err("dataset", "required section is missing")
    seed = c.int_(doc, "seed", "", 0, lo=0, hi=2**64 - 1)
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        c.err("out_dir", f"expected a string, got {out_dir!r}")
        out_dir = None

    datasets = _datasets(c, doc.get("dataset", {}), seed)
    D = len(datasets[0].recipe.classes) if datasets else None
    model = _model(c, doc.get("model", {}), D)
    training = _training(c, doc.get("training", {}))
    det = c.obj(doc.get("detection", {}), "detection", {"b", "th"})
    b = c.int_(det, "b", "detection", 1, lo=1, hi=D)
    th = c.num(det, "th", "detection", 0.1, lo=0.0)
    windows = _windows(c, doc.get("windows", [list(w) for w in harness.DESK_GRID]))
    if c.errors:
        raise ConfigError(c.errors)
    return RunConfig(tuple(datasets), model, training, b, th, windows, seed, out_dir)


def load_config(path, seed: int | None = None) -> RunConfig:
    """Read and validate a config file; ``seed`` replaces the document's top-level seed."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    if seed is not None and isinstance(doc, dict):
        doc["seed"] = seed
    return validate_config(doc)


def _datasets(c: _Checker, d, seed: int) -> list[harness.DatasetSpec]:
    d = c.obj(d, "dataset", {"name", "corpus", "seed", "recipe", "anomalies"})
    corpus_seed = c.int_(d, "seed", "dataset", harness.CORPUS_SEED, lo=0)
    if "corpus" in d:
        if d["corpus"] != "default":
            c.err("dataset.corpus", f"only 'default' is known, got {d['corpus']!r}")
            return []
        for k in ("recipe", "anomalies"):
            if k in d:
                c.err(f"dataset.{k}", "cannot be combined with dataset.corpus")
        return harness.default_corpus(corpus_seed)
    if "recipe" not in d:
        if "anomalies" in d or "name" in d:
            c.err("dataset.recipe", "required unless dataset.corpus is given")
            return []
        return harness.default_corpus(corpus_seed)
    if "seed" in d:
        c.err("dataset.seed", "only used with the default corpus; set dataset.recipe.seed")
    name = d.get("name", "dataset")
    if not isinstance(name, str) or not name or "/" in name:
        c.err("dataset.name", f"expected a non-empty name without '/', got {name!r}")
        name = "dataset"
    recipe = _recipe(c, d["recipe"], seed)
    if recipe is None:
        return []
    anomalies = []
    raw = d.get("anomalies", [])
    if not isinstance(raw, list):
        c.err("dataset.anomalies", "expected a list")
        raw = []
    names = recipe.variable_names()
    for i, a in enumerate(raw):
        spec = _anomaly(c, a, f"dataset.anomalies[{i}]", names, recipe)
        if spec is not None:
            anomalies.append(spec)
    return [harness.DatasetSpec(name, recipe, tuple(anomalies))]


def _recipe(c: _Checker, r, seed: int) -> synth.RecipeSpec | None:
    p = "dataset.recipe"
    r = c.obj(r, p, RECIPE_KEYS)
    n0 = len(c.errors)
    rseed = c.int_(r, "seed", p, seed, lo=0)
    N = c.int_(r, "run_length", p, 500, lo=20)
    runs = c.int_(r, "run_count", p, 3, lo=3, hi=3)
    sigma = c.num(r, "noise_sigma", p, 0.02, lo=0.0)
    jitter = c.int_(r, "jitter", p, 0, lo=0)
    dt = c.num(r, "sample_interval_s", p, 0.1, lo=0.0, open_lo=True)
    if ("classes" in r) == ("counts" in r):
        c.err(p, "give exactly one of 'classes' or 'counts'")
        return None
    if "classes" in r:
        classes = r["classes"]
        if not isinstance(classes, list) or not classes:
            c.err(f"{p}.classes", "expected a non-empty list")
            return None
        for i, cl in enumerate(classes):
            if cl not in synth.CLASSES:
                c.err(f"{p}.classes[{i}]", f"unknown class {cl!r}; expected one of {synth.CLASSES}")
    else:
        counts = c.obj(r["counts"], f"{p}.counts", set(synth.CLASSES))
        n = {k: c.int_(counts, k, f"{p}.counts", 0, lo=0) for k in synth.CLASSES}
        if sum(n.values()) == 0:
            c.err(f"{p}.counts", "recipe needs at least one variable")
    names = r.get("names")
    if names is not None and (not isinstance(names, list)
                              or not all(isinstance(x, str) for x in names)):
        c.err(f"{p}.names", "expected a list of strings")
    if len(c.errors) > n0:
        return None
    try:
        kw = dict(run_length=N, run_count=runs, noise_sigma=sigma, jitter=jitter,
                  sample_interval_s=dt, names=tuple(names) if names else None)
        if "classes" in r:
            return synth.RecipeSpec(rseed, tuple(classes), **kw)
        return synth.RecipeSpec.mixed(rseed, n["step_like"], n["smooth_noisy"], n["idle"], **kw)
    except ValueError as exc:
        c.err(p, str(exc))
        return None


def _anomaly(c: _Checker, a, p: str, names, recipe: synth.RecipeSpec):
    a = c.obj(a, p, ANOMALY_KEYS)
    n0 = len(c.errors)
    var = a.get("variable")
    if var not in names:
        c.err(f"{p}.variable", f"unknown variable {var!r}")
    elif recipe.classes[names.index(var)] != "step_like":
        c.err(f"{p}.variable", f"{var!r} is {recipe.classes[names.index(var)]}; "
                               "anomalies target step_like variables")
    cat = a.get("category")
    if cat not in synth.CATEGORIES:
        c.err(f"{p}.category", f"expected one of {synth.CATEGORIES}, got {cat!r}")
    start = c.int_(a, "start", p, 0, lo=0)
    stop = c.int_(a, "stop", p, recipe.run_length, lo=1, hi=recipe.run_length)
    if start >= stop:
        c.err(f"{p}.start", f"segment [{start}, {stop}) is empty")
    own = {"amplitude_shift": "magnitude", "time_shift": "lag", "step_shift": "displacement"}
    for k in own.values():
        if k in a and k != own.get(cat):
            c.err(f"{p}.{k}", f"not a parameter of {cat}")
    kw = {}
    if cat in own:
        k = own[cat]
        if k not in a:
            c.err(f"{p}.{k}", f"required for {cat}")
        elif k == "magnitude":
            kw[k] = c.num(a, k, p, 0.0)
        else:
            kw[k] = c.int_(a, k, p, 0)
    kw["edge_threshold"] = c.num(a, "edge_threshold", p, 0.1, lo=0.0)
    kw["label_tolerance"] = c.num(a, "label_tolerance", p, synth.LABEL_TOLERANCE, lo=0.0)
    if len(c.errors) > n0:
        return None
    return synth.AnomalySpec(var, cat, start, stop, **kw)


def _model(c: _Checker, m, D: int | None) -> ModelSettings:
    m = c.obj(m, "model", {"kind"} | set(NBEATS_DEFAULTS) | set(GNN_DEFAULTS))
    kind = m.get("kind", "nbeats")
    if kind not in harness.MODELS:
        c.err("model.kind", f"expected one of {harness.MODELS}, got {kind!r}")
        kind = "nbeats"
    nb = {k: c.int_(m, k, "model", v, lo=1) for k, v in NBEATS_DEFAULTS.items()}
    emb = c.int_(m, "emb", "model", 128, lo=1)
    layers = c.int_(m, "head_layers", "model", 1, lo=1, hi=1)
    hi = max(D - 1, 0) if D else None
    raw = m.get("top_k", 1)
    lo = 1 if D is None or D > 1 else 0
    if isinstance(raw, list):
        if not raw:
            c.err("model.top_k", "expected a non-empty list")
        ks = tuple(c.int_(dict(enumerate(raw)), i, "model.top_k", 1, lo=lo, hi=hi)
                   for i in range(len(raw)))
    else:
        ks = (c.int_(m, "top_k", "model", 1, lo=lo, hi=hi),)
    return ModelSettings(kind, nb, emb, ks or (1,), layers)


def _training(c: _Checker, t) -> TrainConfig:
    t = c.obj(t, "training", set(DEFAULT_TRAINING))
    epochs = c.int_(t, "epochs", "training", 1000, lo=1)
    patience = c.int_(t, "patience", "training", 100, lo=1)
    batch = c.int_(t, "batch", "training", 32, lo=1)
    lr = c.num(t, "lr", "training", 0.001, lo=0.0, open_lo=True)
    pl = c.obj(t.get("plateau", {}), "training.plateau", {"factor", "patience"})
    factor = c.num(pl, "factor", "training.plateau", 0.5, lo=0.0, hi=1.0, open_lo=True)
    ppat = c.int_(pl, "patience", "training.plateau", 5, lo=1)
    return TrainConfig(epochs=epochs, patience=patience, batch_size=batch, lr=lr,
                       plateau_factor=factor, plateau_patience=ppat)


def _windows(c: _Checker, w) -> tuple[tuple[int, int], ...]:
    if not isinstance(w, list) or not w:
        c.err("windows", "expected a non-empty list of [lookback, horizon] pairs")
        return harness.DESK_GRID
    out = []
    for i, pair in enumerate(w):
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in pair)):
            c.err(f"windows[{i}]", f"expected [lookback, horizon] integers, got {pair!r}")
            continue
        if tuple(pair) not in harness.FULL_GRID:
            c.err(f"windows[{i}]", f"{pair} is not one of {[list(g) for g in harness.FULL_GRID]}")
            continue
        out.append(tuple(pair))
    return tuple(out)
