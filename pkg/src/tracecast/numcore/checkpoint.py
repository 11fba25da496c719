"""Self-describing parameter container.

A checkpoint is a UTF-8 JSON document with sorted keys. Each tensor stores its
shape and its row-major little-endian float64 bytes in base64, so values
round-trip exactly and save -> load -> save reproduces the same bytes.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    architecture: dict[str, Any]
    params: dict[str, np.ndarray]
    seed: int
    extra: dict[str, Any] = field(default_factory=dict)


def _encode(arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes(order="C")).decode("ascii")}


def _decode(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(tuple(obj["shape"])).astype(np.float64)


def dumps(ckpt: Checkpoint) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "architecture": ckpt.architecture,
        "seed": int(ckpt.seed),
        "params": {k: _encode(v) for k, v in ckpt.params.items()},
        "extra": ckpt.extra,
    }
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def loads(raw: bytes) -> Checkpoint:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"not a checkpoint: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    params = {k: _decode(v) for k, v in doc["params"].items()}
    return Checkpoint(doc["architecture"], params, doc["seed"], doc.get("extra", {}))


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(ckpt))
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return loads(path.read_bytes())
