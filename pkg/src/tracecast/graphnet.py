"""Graph-attention forecaster over learned sensor embeddings.

Per sample with lookback matrix ``X`` (D x L):

    xw    = X W^T + b                          shared input transform, D x Emb
    g_i   = v_i (+) xw_i                       concatenation, length 2 Emb
    P_ij  = LeakyReLU(a . (g_i (+) g_j))
    alpha = softmax of P over each row, restricted to the adjacency A
    Z     = ReLU(alpha @ xw)
    Y_i   = (v_i * z_i) @ U + c                one affine head shared by all nodes

``A`` keeps, for node ``i``, the ``top_k`` nodes most cosine-similar to ``v_i``
(excluding ``i``) plus a forced self-loop. It is rebuilt from ``V`` once per
training epoch; no gradient flows through the selection.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import checkpoint
from .numcore.optim import FitResult, TrainConfig, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphConfig:
    lookback: int
    horizon: int
    num_nodes: int
    emb: int = 128
    top_k: int = 1
    head_layers: int = 1
    input_bias: bool = True

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.num_nodes, self.emb) < 1:
            raise ValueError("lookback, horizon, num_nodes and emb must be >= 1")
        if self.num_nodes > 1 and not 1 <= self.top_k <= self.num_nodes - 1:
            raise ValueError(f"top_k must lie in [1, {self.num_nodes - 1}] for "
                             f"{self.num_nodes} nodes, got {self.top_k}")
        if self.num_nodes == 1 and self.top_k < 0:
            raise ValueError("top_k must be >= 0")
        if self.head_layers != 1:
            raise ValueError("only a single-layer forecasting head is supported")


@dataclass
class GraphModel:
    config: GraphConfig
    params: dict[str, np.ndarray]
    adjacency: np.ndarray
    seed: int = 0

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def graph(self) -> "SensorGraph":
        return sensor_graph(self.params["V"], self.config.top_k)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """(B, D, L) lookback windows -> (B, D, H) forecasts."""
        p = nc.parameters(self.params)
        Z, _ = attention_forward(p, self.config, self.adjacency, inputs)
        return forecast(p, Z).data


@dataclass(frozen=True)
class SensorGraph:
    embeddings: np.ndarray
    similarity: np.ndarray
    adjacency: np.ndarray


def count_parameters(config: GraphConfig) -> int:
    E, L, H, D = config.emb, config.lookback, config.horizon, config.num_nodes
    return D * E + E * L + (E if config.input_bias else 0) + 4 * E + (E * H + H)


def cosine_similarity(V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    norms = np.sqrt((V * V).sum(axis=1))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"embedding of node {int(zero[0])} has zero norm")
    U = V / norms[:, None]
    return U @ U.T


def build_adjacency(E: np.ndarray, top_k: int) -> np.ndarray:
    """Top-``top_k`` most similar other nodes per row (ties to the lower index) plus self-loops."""
    D = E.shape[0]
    k = min(top_k, D - 1)
    A = np.zeros((D, D), dtype=np.int8)
    for i in range(D):
        cand = np.delete(np.arange(D), i)
        order = np.argsort(-E[i, cand], kind="stable")
        A[i, cand[order[:k]]] = 1
        A[i, i] = 1
    return A


def sensor_graph(V: np.ndarray, top_k: int) -> SensorGraph:
    E = cosine_similarity(V)
    return SensorGraph(np.asarray(V), E, build_adjacency(E, top_k))


def build(config: GraphConfig, seed: int = 0) -> GraphModel:
    rng = np.random.default_rng(seed)
    E, L, H, D = config.emb, config.lookback, config.horizon, config.num_nodes
    V = rng.standard_normal((D, E))
    # rows of norm sqrt(E): entries of unit scale, so fixed-size Adam steps do
    # not reshuffle the top-K neighbours every epoch
    V *= np.sqrt(E) / np.linalg.norm(V, axis=1, keepdims=True)
    # He-uniform W keeps the relu features alive; a zero attention vector
    # starts every node with uniform weights over its neighbourhood
    p = {"V": V, "W": rng.uniform(-1, 1, (E, L)) * np.sqrt(6.0 / L)}
    if config.input_bias:
        p["W_b"] = np.zeros(E)
    p["a"] = np.zeros(4 * E)
    p["head.w"] = rng.uniform(-1, 1, (E, H)) / np.sqrt(E)
    p["head.b"] = rng.uniform(-1, 1, H) / np.sqrt(E)
    return GraphModel(config, p, build_adjacency(cosine_similarity(V), config.top_k), seed)


def attention_forward(params, config: GraphConfig, A: np.ndarray, x):
    """Return ``(Z, alpha)`` for a (B, D, L) batch; shapes (B, D, Emb) and (B, D, D)."""
    x = nc.as_tensor(x)
    B, D, L = x.shape
    if D != config.num_nodes or L != config.lookback:
        raise nc.ShapeError(f"graph input {x.shape} does not match nodes={config.num_nodes}, "
                            f"lookback={config.lookback}")
    E = config.emb
    xw = x @ nc.transpose(params["W"])
    if "W_b" in params:
        xw = xw + params["W_b"]
    g = nc.concat([nc.broadcast_batch(params["V"], B), xw], axis=-1)
    a = params["a"]
    logits = nc.leaky_relu(nc.pair_sum(g @ a[:2 * E], g @ a[2 * E:]))
    alpha = nc.masked_softmax(logits, A)
    Z = nc.relu(alpha @ xw)
    return Z, alpha


def forecast(params, Z):
    return (params["V"] * Z) @ params["head.w"] + params["head.b"]


def loss(params, config: GraphConfig, A, x, y):
    """Mean over windows of the squared L2 norm of the flattened D x H error."""
    Z, _ = attention_forward(params, config, A, x)
    return nc.sum(nc.square(forecast(params, Z) - y)) * (1.0 / len(x))


def train(train_batch, val_batch, config: GraphConfig, train_config: TrainConfig,
          seed: int) -> tuple[GraphModel, FitResult]:
    model = build(config, seed)
    state = {"A": model.adjacency}

    def rebuild(params):
        state["A"] = build_adjacency(cosine_similarity(params["V"]), config.top_k)

    res = fit(lambda p, a, b: loss(p, config, state["A"], a, b), model.params,
              train_batch.inputs, train_batch.targets, val_batch.inputs, val_batch.targets,
              train_config, seed, on_epoch_start=rebuild, label="gnn ")
    model.params = res.params
    model.adjacency = build_adjacency(cosine_similarity(res.params["V"]), config.top_k)
    return model, res


def save_model(path, model: GraphModel) -> Path:
    arch = {"kind": "gnn", **asdict(model.config)}
    extra = {"top_k": model.config.top_k, "adjacency": model.adjacency.tolist()}
    return checkpoint.save(path, checkpoint.Checkpoint(arch, model.params, model.seed, extra))


def load_model(path) -> GraphModel:
    ck = checkpoint.load(path)
    arch = dict(ck.architecture)
    if arch.pop("kind", None) != "gnn":
        raise checkpoint.CheckpointError(f"{path} is not a GNN checkpoint")
    return GraphModel(GraphConfig(**arch), ck.params,
                      np.asarray(ck.extra["adjacency"], dtype=np.int8), ck.seed)


def export_edges(path, model: GraphModel, names) -> Path:
    """Edge list ``source -> target`` for every nonzero adjacency entry."""
    g = model.graph()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "similarity", "self_loop"])
        for i, j in zip(*np.nonzero(model.adjacency)):
            w.writerow([names[j], names[i], repr(float(g.similarity[i, j])), int(i == j)])
    return path
