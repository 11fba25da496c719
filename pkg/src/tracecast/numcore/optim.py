"""Adam, reduce-on-plateau, early stopping and the shared minibatch loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import NumericError, Tensor, backward

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    lr: float = 1e-3
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best: float = math.inf
    bad_calls: int = 0
    plateau_factor: float = 0.5
    plateau_patience: int = 5


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update. Returns new arrays; ``state`` is advanced in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{params[name].shape} for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        out[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + EPS)
    return out, state


def plateau_schedule(state: OptimizerState, val_loss: float) -> OptimizerState:
    """Halve (by ``plateau_factor``) the lr after ``plateau_patience`` calls without improvement."""
    if val_loss < state.best:
        state.best = val_loss
        state.bad_calls = 0
    else:
        state.bad_calls += 1
        if state.bad_calls >= state.plateau_patience:
            state.lr *= state.plateau_factor
            state.bad_calls = 0
    return state


def early_stop(history: Sequence[float], patience: int = 100) -> bool:
    """True when the best loss in ``history`` lies more than ``patience`` entries back."""
    if not len(history):
        raise ValueError("early_stop needs a non-empty history")
    best_at = int(np.argmin(history))  # first occurrence: ties are not improvements
    return len(history) - 1 - best_at > patience


@dataclass
class TrainConfig:
    epochs: int = 1000
    patience: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 5


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    epochs_run: int


LossFn = Callable[[dict[str, Tensor], np.ndarray, np.ndarray], Tensor]


def fit(loss_fn: LossFn, params: Mapping[str, np.ndarray], inputs: np.ndarray,
        targets: np.ndarray, val_inputs: np.ndarray, val_targets: np.ndarray,
        config: TrainConfig, seed: int,
        on_epoch_start: Callable[[dict[str, np.ndarray]], None] | None = None,
        label: str = "") -> FitResult:
    """Minibatch Adam with plateau lr decay and early stopping.

    ``loss_fn(params, x, y)`` must return a scalar Tensor. The parameters with
    the best validation loss are returned. When the validation set is empty
    the training loss stands in for it.
    """
    rng = np.random.default_rng(seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = OptimizerState(lr=config.lr, plateau_factor=config.plateau_factor,
                           plateau_patience=config.plateau_patience)
    n = len(inputs)
    best = dict(params)
    best_val = math.inf
    best_epoch = -1
    train_hist: list[float] = []
    val_hist: list[float] = []
    for epoch in range(config.epochs):
        if on_epoch_start is not None:
            on_epoch_start(params)
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            leaves = {k: Tensor(v) for k, v in params.items()}
            try:
                loss = loss_fn(leaves, inputs[idx], targets[idx])
                grads = backward(loss, leaves)
                params, state = adam_step(params, grads, state)
            except NumericError as exc:
                raise NumericError(f"{label}epoch {epoch} batch {bi}: {exc}") from exc
            total += loss.item() * len(idx)
        train_hist.append(total / n)
        if len(val_inputs):
            leaves = {k: Tensor(v) for k, v in params.items()}
            val = loss_fn(leaves, val_inputs, val_targets).item()
        else:
            val = train_hist[-1]
        val_hist.append(val)
        if val < best_val:
            best_val, best, best_epoch = val, dict(params), epoch
        plateau_schedule(state, val)
        if early_stop(val_hist, config.patience):
            break
    log.debug("%sstopped after %d epochs, best val %.3g at %d", label, len(val_hist),
              best_val, best_epoch)
    return FitResult(best, train_hist, val_hist, best_epoch, len(val_hist))
