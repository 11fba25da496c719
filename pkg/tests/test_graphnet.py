import numpy as np
import pytest

from tracecast import dataset as ds
from tracecast import graphnet as gn
from tracecast import numcore as nc
from tracecast.numcore import TrainConfig

import oracles

V3 = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])


def test_cosine_examples():
    E = gn.cosine_similarity(V3)
    ref = oracles.cosine_matrix(V3.tolist())
    assert np.allclose(E, ref, rtol=0, atol=1e-15)
    assert E[0, 1] == pytest.approx(0.9939, abs=1e-4)
    assert E[0, 2] == 0.0
    assert E[1, 2] == pytest.approx(0.1104, abs=1e-4)
    assert gn.cosine_similarity(np.array([[1.0, 2.0], [-1.0, -2.0]]))[0, 1] == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="node 1"):
        gn.cosine_similarity(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_adjacency_examples():
    A = gn.build_adjacency(gn.cosine_similarity(V3), 1)
    sets = [set(np.flatnonzero(r)) for r in A]
    assert sets == [{0, 1}, {1, 0}, {2, 1}]
    assert sets == oracles.topk_neighbours(gn.cosine_similarity(V3).tolist(), 1)
    assert np.all(gn.build_adjacency(gn.cosine_similarity(V3), 2) == 1)
    assert gn.build_adjacency(np.ones((1, 1)), 1).tolist() == [[1]]


@pytest.mark.parametrize("D,k", [(2, 1), (5, 1), (5, 3), (8, 7), (16, 6)])
def test_adjacency_degree(D, k):
    V = np.random.default_rng(D * 10 + k).normal(size=(D, 4))
    A = gn.build_adjacency(gn.cosine_similarity(V), k)
    assert np.all(A.sum(axis=1) == min(k, D - 1) + 1)
    assert np.all(np.diag(A) == 1)


def test_parameter_counts():
    assert gn.count_parameters(gn.GraphConfig(10, 3, 131, input_bias=False)) == 18947
    assert gn.count_parameters(gn.GraphConfig(500, 100, 131, input_bias=False)) == 94180
    assert gn.count_parameters(gn.GraphConfig(2, 1, 1, emb=2, top_k=0, input_bias=False)) == 17
    a = gn.count_parameters(gn.GraphConfig(10, 3, 131))
    b = gn.count_parameters(gn.GraphConfig(10, 6, 131))
    assert b - a == 128 * 3 + 3
    assert gn.build(gn.GraphConfig(10, 3, 131)).num_parameters() == 18947 + 128


def _tiny(seed, D=3, E=2, L=2, H=2, k=1):
    cfg = gn.GraphConfig(L, H, D, emb=E, top_k=k)
    m = gn.build(cfg, seed)
    rng = np.random.default_rng(seed)
    for key in ("a", "W_b"):
        m.params[key] = rng.normal(size=m.params[key].shape)
    return cfg, m, rng.normal(size=(4, D, L))


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_loop_oracle(seed):
    cfg, m, x = _tiny(seed)
    p = m.params
    Z, alpha = gn.attention_forward(nc.parameters(p), cfg, m.adjacency, x)
    Y = m.predict(x)
    for s in range(len(x)):
        oY, oZ, oA = oracles.gnn_forward_loop(p["V"].tolist(), p["W"].tolist(), p["W_b"].tolist(),
                                             p["a"].tolist(), p["head.w"].tolist(), p["head.b"].tolist(),
                                             m.adjacency.tolist(), x[s].tolist())
        assert np.allclose(Z.data[s], oZ, rtol=0, atol=1e-10)
        assert np.allclose(alpha.data[s], oA, rtol=0, atol=1e-10)
        assert np.allclose(Y[s], oY, rtol=0, atol=1e-10)


def test_attention_rows():
    cfg, m, x = _tiny(7, D=6, E=3, L=4, k=2)
    _, alpha = gn.attention_forward(nc.parameters(m.params), cfg, m.adjacency, x)
    assert np.all(alpha.data[:, m.adjacency == 0] == 0)
    assert np.allclose(alpha.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_single_node():
    cfg = gn.GraphConfig(3, 2, 1, emb=4, top_k=0)
    m = gn.build(cfg, 0)
    m.params["W_b"] = np.array([0.1, -0.2, 0.3, -0.4])
    x = np.random.default_rng(0).normal(size=(2, 1, 3))
    Z, alpha = gn.attention_forward(nc.parameters(m.params), cfg, m.adjacency, x)
    assert np.all(alpha.data == 1.0)
    assert np.allclose(Z.data, np.maximum(x @ m.params["W"].T + m.params["W_b"], 0))


def test_head_annihilation():
    cfg, m, x = _tiny(3)
    m.params["head.w"] = np.zeros_like(m.params["head.w"])
    assert np.allclose(m.predict(x), np.broadcast_to(m.params["head.b"], (4, 3, 2)))
    cfg, m, x = _tiny(3)
    m.params["V"] = m.params["V"].copy()
    m.params["V"][1] = 0.0
    assert np.allclose(m.predict(x)[:, 1], m.params["head.b"])


def test_permutation_equivariance():
    cfg, m, x = _tiny(4, D=5, E=3, L=3, k=2)
    perm = np.array([3, 0, 4, 1, 2])
    q = gn.GraphModel(cfg, dict(m.params, V=m.params["V"][perm]),
                      m.adjacency[np.ix_(perm, perm)])
    assert np.allclose(q.predict(x[:, perm]), m.predict(x)[:, perm], rtol=0, atol=1e-12)


def test_shape_error():
    cfg, m, x = _tiny(0)
    with pytest.raises(nc.ShapeError, match="nodes=3"):
        m.predict(x[:, :2])


def test_clean_step_signal_single_node():
    rows = (np.arange(480) // 6 % 2).astype(float)[:, None]
    b = ds.windowize(rows, 10, 3)
    tr, va = ds.validation_sample(b, 0.1, 0)
    m, res = gn.train(tr, va, gn.GraphConfig(10, 3, 1, emb=32, top_k=0),
                      TrainConfig(epochs=300, patience=50), seed=0)
    assert np.mean((m.predict(va.inputs) - va.targets) ** 2) < 1e-3


def test_checkpoint_and_edges(tmp_path):
    cfg, m, x = _tiny(2, D=4, E=3, L=3, k=2)
    back = gn.load_model(gn.save_model(tmp_path / "d.gnn", m))
    assert np.array_equal(back.adjacency, m.adjacency)
    assert np.array_equal(back.predict(x), m.predict(x))
    lines = gn.export_edges(tmp_path / "edges.csv", m, ["a", "b", "c", "d"]).read_text().splitlines()
    assert len(lines) - 1 == int(m.adjacency.sum())
