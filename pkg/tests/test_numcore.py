import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracecast import numcore as nc
from tracecast.numcore import checkpoint
from tracecast.numcore.optim import OptimizerState, TrainConfig, fit

import gradcases
import oracles


# ---------------------------------------------------------------- forward

def test_matmul_of_ones():
    out = nc.Tensor(np.ones((2, 3))) @ nc.Tensor(np.ones((3, 4)))
    assert out.shape == (2, 4)
    assert np.all(out.data == 3.0)


def test_relu_and_leaky():
    assert nc.relu(nc.Tensor(np.array([-1.0, 0.0, 2.0]))).data.tolist() == [0.0, 0.0, 2.0]
    # oracle: piecewise definition with slope 0.2
    assert nc.leaky_relu(nc.Tensor(np.array([-1.0]))).data[0] == pytest.approx(oracles.leaky(-1.0))
    assert oracles.leaky(-1.0) == pytest.approx(-0.2)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nc.Tensor(np.ones((2, 3))) @ nc.Tensor(np.ones((4, 5)))
    with pytest.raises(nc.ShapeError):
        nc.Tensor(np.ones((2, 3))) + nc.Tensor(np.ones((4, 3)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_raises():
    with pytest.raises(nc.NumericError, match="overflow"):
        nc.square(nc.Tensor(np.array([1e200])))


def test_masked_softmax_rows():
    rng = np.random.default_rng(0)
    mask = rng.random((5, 5)) < 0.5
    mask[np.arange(5), np.arange(5)] = True
    a = nc.masked_softmax(nc.Tensor(rng.normal(size=(3, 5, 5)) * 50), mask).data
    assert np.all(a[:, ~mask] == 0)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12, rtol=0)


# --------------------------------------------------------------- backward

def test_square_gradient():
    x = nc.Tensor(np.array(3.0))
    g = nc.backward(x * x, {"x": x})
    assert g["x"] == pytest.approx(6.0)


def test_unused_parameter_gets_zero_gradient():
    used = nc.Tensor(np.ones(3))
    unused = nc.Tensor(np.ones((2, 2)))
    g = nc.backward(nc.sum(used * 2.0), {"used": used, "unused": unused})
    assert np.array_equal(g["unused"], np.zeros((2, 2)))
    assert np.array_equal(g["used"], np.full(3, 2.0))


def test_backward_requires_scalar():
    x = nc.Tensor(np.ones(3))
    with pytest.raises(nc.ShapeError):
        nc.backward(x * 2.0, {"x": x})


@pytest.mark.parametrize("name,f,params", list(gradcases.op_cases(seeds=range(2))),
                         ids=lambda v: v if isinstance(v, str) else "")
def test_gradient_per_op(name, f, params):
    assert gradcases.check(f, params) < 1e-4


# ------------------------------------------------------------------- adam

def test_adam_first_step_is_lr():
    p, _ = nc.adam_step({"w": np.array([1.0])}, {"w": np.array([1.0])}, OptimizerState(lr=1e-3))
    assert 1.0 - p["w"][0] == pytest.approx(1e-3, rel=1e-6)


def test_adam_zero_gradient_is_fixed_point():
    state = OptimizerState()
    p, state = nc.adam_step({"w": np.array([2.0])}, {"w": np.array([1.0])}, state)
    m_before = state.m["w"].copy()
    q, state = nc.adam_step(p, {"w": np.array([0.0])}, state)
    # moments decay towards zero; the first-moment step is still nonzero
    assert abs(state.m["w"][0]) < abs(m_before[0])
    z = {"w": np.array([5.0])}
    fresh, _ = nc.adam_step(z, {"w": np.array([0.0])}, OptimizerState())
    assert fresh["w"][0] == 5.0


def test_adam_matches_scalar_oracle():
    grads = np.random.default_rng(4).normal(size=50)
    expected = oracles.adam_scalar(0.5, grads)
    state = OptimizerState()
    p = {"w": np.array([0.5])}
    got = []
    for g in grads:
        p, state = nc.adam_step(p, {"w": np.array([g])}, state)
        got.append(p["w"][0])
    assert np.allclose(got, expected, rtol=0, atol=1e-15)


def test_adam_non_finite_gradient_names_parameter():
    with pytest.raises(nc.NumericError, match="'bias'"):
        nc.adam_step({"bias": np.zeros(2)}, {"bias": np.array([0.0, np.nan])}, OptimizerState())


# -------------------------------------------------------------- schedules

def test_plateau_monotone_keeps_lr():
    s = OptimizerState(lr=1e-3)
    for v in (1.0, 0.9, 0.8):
        nc.plateau_schedule(s, v)
    assert s.lr == 1e-3


def test_plateau_halves_after_five_flat_calls():
    s = OptimizerState(lr=1e-3)
    lrs = [nc.plateau_schedule(s, 1.0).lr for _ in range(6)]
    assert lrs[:5] == [1e-3] * 5
    assert lrs[5] == pytest.approx(5e-4)


def test_early_stop_examples():
    assert not nc.early_stop([1.0] + [1.0] * 99, patience=100)
    assert nc.early_stop([1.0] + [1.0] * 101, patience=100)
    assert not nc.early_stop(list(np.linspace(1000, 1, 1000)), patience=100)
    with pytest.raises(ValueError):
        nc.early_stop([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=60),
       st.integers(0, 20))
def test_early_stop_property(history, patience):
    best = history.index(min(history))
    assert nc.early_stop(history, patience) == (len(history) - 1 - best > patience)


def test_fit_reduces_loss_and_is_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 3))
    y = x @ np.array([1.0, -2.0, 0.5])

    def loss(p, a, b):
        r = a @ p["w"] - b
        return nc.sum(nc.square(r)) * (1.0 / len(a))

    cfg = TrainConfig(epochs=200, patience=20, lr=0.05)
    r1 = fit(loss, {"w": np.zeros(3)}, x, y, x[:8], y[:8], cfg, seed=3)
    r2 = fit(loss, {"w": np.zeros(3)}, x, y, x[:8], y[:8], cfg, seed=3)
    assert r1.val_loss[r1.best_epoch] < 1e-3
    assert np.array_equal(r1.params["w"], r2.params["w"])
    assert r1.val_loss == r2.val_loss


# ------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    ck = nc.Checkpoint({"kind": "x", "n": 3}, {"a": rng.normal(size=(2, 3)), "b": np.array(math.pi)}, 7)
    p = checkpoint.save(tmp_path / "m.ckpt", ck)
    back = checkpoint.load(p)
    assert back.seed == 7 and back.architecture == ck.architecture
    for k in ck.params:
        assert np.array_equal(back.params[k], ck.params[k])
    assert checkpoint.dumps(back) == p.read_bytes()


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="checkpoint not found"):
        checkpoint.load(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not json")
    with pytest.raises(nc.CheckpointError):
        checkpoint.load(bad)
    bad.write_text('{"format_version": 99}')
    with pytest.raises(nc.CheckpointError, match="version"):
        checkpoint.load(bad)
