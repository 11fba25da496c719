"""Univariate N-BEATS with the generic (linear) basis.

One model per variable. Each stack holds one block whose weights are reused
for every block application in that stack:

    h      = ReLU(FC4(ReLU(FC3(ReLU(FC2(ReLU(FC1(r))))))))
    theta  = h @ P_b,  h @ P_f                  (bias-free projections)
    back   = theta_b @ G_b + c_b,  fore = theta_f @ G_f + c_f
    r_next = r - back

The final forecast is the sum of every block application's forecast.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import checkpoint
from .numcore.optim import FitResult, TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NBeatsConfig:
    lookback: int
    horizon: int
    num_stacks: int = 2
    blocks_per_stack: int = 2
    basis_dim: int = 4
    hidden_width: int = 128
    fc_layers: int = 4

    def __post_init__(self):
        for k, v in asdict(self).items():
            if int(v) < 1:
                raise ValueError(f"NBeatsConfig.{k} must be positive, got {v}")


@dataclass
class NBeatsModel:
    config: NBeatsConfig
    params: dict[str, np.ndarray]
    variable: str = ""
    seed: int = 0

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forecast for a (B, L) batch of lookback windows -> (B, H)."""
        fc, _ = forward(nc.parameters(self.params), self.config, x)
        return fc.data


def parameter_count(config: NBeatsConfig) -> int:
    """Closed-form trainable parameter count."""
    w, L, H, k = config.hidden_width, config.lookback, config.horizon, config.basis_dim
    fc = (L * w + w) + (config.fc_layers - 1) * (w * w + w)
    per_stack = fc + 2 * (w * k) + (k * L + L) + (k * H + H)
    return config.num_stacks * per_stack


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build(config: NBeatsConfig, seed: int = 0, variable: str = "") -> NBeatsModel:
    rng = np.random.default_rng(seed)
    w, k = config.hidden_width, config.basis_dim
    p: dict[str, np.ndarray] = {}
    for s in range(config.num_stacks):
        fan_in = config.lookback
        for j in range(config.fc_layers):
            p[f"s{s}.fc{j}.w"] = _uniform(rng, fan_in, (fan_in, w))
            p[f"s{s}.fc{j}.b"] = _uniform(rng, fan_in, (w,))
            fan_in = w
        p[f"s{s}.theta_b"] = _uniform(rng, w, (w, k))
        p[f"s{s}.theta_f"] = _uniform(rng, w, (w, k))
        p[f"s{s}.back.w"] = _uniform(rng, k, (k, config.lookback))
        p[f"s{s}.back.b"] = _uniform(rng, k, (config.lookback,))
        p[f"s{s}.fore.w"] = _uniform(rng, k, (k, config.horizon))
        p[f"s{s}.fore.b"] = _uniform(rng, k, (config.horizon,))
    return NBeatsModel(config, p, variable, seed)


def block(params, config: NBeatsConfig, stack: int, r):
    """One block application on residual ``r``; returns (backcast, forecast)."""
    h = r
    for j in range(config.fc_layers):
        h = nc.relu(h @ params[f"s{stack}.fc{j}.w"] + params[f"s{stack}.fc{j}.b"])
    theta_b = h @ params[f"s{stack}.theta_b"]
    theta_f = h @ params[f"s{stack}.theta_f"]
    back = theta_b @ params[f"s{stack}.back.w"] + params[f"s{stack}.back.b"]
    fore = theta_f @ params[f"s{stack}.fore.w"] + params[f"s{stack}.fore.b"]
    return back, fore


def forward(params, config: NBeatsConfig, x, return_blocks: bool = False):
    """Run all stacks on a (B, L) batch.

    Returns ``(forecast, residual)``; with ``return_blocks`` also the list of
    per-application (backcast, forecast) pairs.
    """
    r = nc.as_tensor(x)
    if r.shape[-1] != config.lookback:
        raise nc.ShapeError(f"nbeats: input length {r.shape[-1]} != lookback {config.lookback}")
    total = None
    blocks = []
    for s in range(config.num_stacks):
        for _ in range(config.blocks_per_stack):
            back, fore = block(params, config, s, r)
            blocks.append((back, fore))
            r = r - back
            total = fore if total is None else total + fore
    if return_blocks:
        return total, r, blocks
    return total, r


def loss(params, config: NBeatsConfig, x: np.ndarray, y: np.ndarray):
    """Mean over windows of the squared L2 forecast error."""
    fc, _ = forward(params, config, x)
    return nc.sum(nc.square(fc - y)) * (1.0 / len(x))


def train_one(config: NBeatsConfig, x, y, val_x, val_y, train_config: TrainConfig,
              seed: int, variable: str = "") -> tuple[NBeatsModel, FitResult]:
    model = build(config, seed, variable)
    try:
        res = fit(lambda p, a, b: loss(p, config, a, b), model.params, x, y, val_x, val_y,
                  train_config, seed)
    except nc.NumericError as exc:
        raise nc.NumericError(f"variable {variable!r}: {exc}") from exc
    model.params = res.params
    return model, res


def _train_job(args):
    return train_one(*args)[0]


def train_per_variable(train_batch, val_batch, config: NBeatsConfig, train_config: TrainConfig,
                       seed: int, variable_names=None, workers: int = 1) -> list[NBeatsModel]:
    """Train one independent model per variable; variable ``d`` uses seed ``seed + d``."""
    if train_batch.inputs.shape[2] != config.lookback or train_batch.targets.shape[2] != config.horizon:
        raise nc.ShapeError(
            f"window batch is {train_batch.inputs.shape[2]}x{train_batch.targets.shape[2]}, "
            f"model expects {config.lookback}x{config.horizon}")
    D = train_batch.inputs.shape[1]
    names = list(variable_names) if variable_names is not None else [f"v{d}" for d in range(D)]
    jobs = [(config, train_batch.inputs[:, d, :], train_batch.targets[:, d, :],
             val_batch.inputs[:, d, :], val_batch.targets[:, d, :], train_config, seed + d, names[d])
            for d in range(D)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_job, jobs))
    return [_train_job(j) for j in jobs]


def predict_all(models: list[NBeatsModel], inputs: np.ndarray) -> np.ndarray:
    """Stack per-variable forecasts for a (B, D, L) batch into (B, D, H)."""
    return np.stack([m.predict(inputs[:, d, :]) for d, m in enumerate(models)], axis=1)


def save_model(path, model: NBeatsModel) -> Path:
    arch = {"kind": "nbeats", **asdict(model.config), "variable": model.variable}
    return checkpoint.save(path, checkpoint.Checkpoint(arch, model.params, model.seed))


def load_model(path) -> NBeatsModel:
    ck = checkpoint.load(path)
    arch = dict(ck.architecture)
    if arch.pop("kind", None) != "nbeats":
        raise checkpoint.CheckpointError(f"{path} is not an N-BEATS checkpoint")
    variable = arch.pop("variable", "")
    return NBeatsModel(NBeatsConfig(**arch), ck.params, variable, ck.seed)
