import json

import pytest

from tracecast import harness
from tracecast.config import ConfigError, load_config, validate_config


def _errors(doc):
    with pytest.raises(ConfigError) as info:
        validate_config(doc)
    return info.value.errors


def test_defaults():
    cfg = validate_config({"dataset": {}})
    t = cfg.training
    assert (t.epochs, t.patience, t.batch_size, t.lr) == (1000, 100, 32, 0.001)
    assert (t.plateau_factor, t.plateau_patience) == (0.5, 5)
    assert (cfg.b, cfg.th, cfg.seed) == (1, 0.1, 0)
    assert cfg.windows == harness.DESK_GRID
    assert cfg.model.kind == "nbeats" and cfg.model.emb == 128 and cfg.model.top_k == (1,)
    assert cfg.model.nbeats["hidden_width"] == 128 and cfg.model.nbeats_overrides() == {}
    assert [d.name for d in cfg.datasets] == ["amplitude", "time", "step"]
    assert cfg.num_variables == 16


def test_top_k_range_error():
    errs = _errors({"dataset": {}, "model": {"kind": "gnn", "top_k": 200}})
    assert any(e.startswith("model.top_k:") and "<= 15" in e for e in errs)
    errs = _errors({"dataset": {}, "model": {"kind": "gnn", "top_k": [1, 3, 16]}})
    assert any(e.startswith("model.top_k[2]:") for e in errs)


def test_unknown_keys():
    errs = _errors({"dataset": {}, "detection": {"treshold": 0.2}})
    assert errs == ["detection.treshold: unknown key"]
    assert "bogus: unknown key" in _errors({"dataset": {}, "bogus": 1})
    assert "dataset: required section is missing" in _errors({})


def test_every_violation_is_reported():
    errs = _errors({"dataset": {}, "training": {"epochs": 0, "lr": -1},
                    "detection": {"b": 0}, "windows": [[10, 4]]})
    paths = sorted(e.split(":")[0] for e in errs)
    assert paths == ["detection.b", "training.epochs", "training.lr", "windows[0]"]


def test_custom_dataset():
    doc = {"dataset": {"name": "mini", "recipe": {"seed": 4, "classes": ["step_like", "idle"],
                                                  "run_length": 60},
                       "anomalies": [{"variable": "Hardware00/Variable00", "category": "amplitude_shift",
                                      "start": 10, "stop": 20, "magnitude": 0.2}]},
           "model": {"kind": "gnn", "emb": 8}, "windows": [[10, 3]], "seed": 9}
    cfg = validate_config(doc)
    (spec,) = cfg.datasets
    assert spec.recipe.run_length == 60 and spec.anomalies[0].magnitude == 0.2
    assert cfg.seed == 9 and cfg.windows == ((10, 3),)
    plan = cfg.plan("out")
    assert plan.model == "gnn" and plan.emb == 8


def test_anomaly_errors_have_paths():
    doc = {"dataset": {"recipe": {"classes": ["step_like", "idle"], "run_length": 60},
                       "anomalies": [{"variable": "Hardware00/Variable01", "category": "time_shift",
                                      "start": 10, "stop": 90, "lag": 2, "magnitude": 1.0}]}}
    paths = sorted(e.split(":")[0] for e in _errors(doc))
    assert paths == ["dataset.anomalies[0].magnitude", "dataset.anomalies[0].stop",
                     "dataset.anomalies[0].variable"]


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"dataset": {"corpus": "default", "seed": 3}}))
    assert len(load_config(p).datasets) == 3
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(p)
