import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracecast import dataset as ds

import oracles


def _write(path, rows, names=("a",), dt=0.1):
    lines = ["time," + ",".join(names)]
    for i, r in enumerate(rows):
        lines.append(f"{i * dt}," + ",".join(str(v) for v in r))
    path.write_text("\n".join(lines) + "\n")
    return path


def _trace(values, N, R=3):
    values = np.asarray(values, dtype=float).reshape(N * R, -1)
    return ds.Trace(values, tuple(f"v{i}" for i in range(values.shape[1])), 0.1, N, R)


def test_load_full_size_trace(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.random((6273, 131)).round(4)
    p = tmp_path / "big.csv"
    with p.open("w") as fh:
        fh.write("time," + ",".join(f"x{i}" for i in range(131)) + "\n")
        for i, r in enumerate(vals):
            fh.write(f"{i * 0.1}," + ",".join(map(str, r)) + "\n")
    tr = ds.load_trace(p, 3)
    assert (tr.run_length, tr.num_variables) == (2091, 131)
    assert np.array_equal(tr.values, vals)


def test_load_small_and_indivisible(tmp_path):
    tr = ds.load_trace(_write(tmp_path / "a.csv", [[1], [2], [3], [4]]), 2)
    assert tr.run_length == 2 and tr.sample_interval_s == pytest.approx(0.1)
    with pytest.raises(ds.IngestionError, match="5 rows"):
        ds.load_trace(_write(tmp_path / "b.csv", [[1]] * 5), 2)


def test_missing_cell_reports_row_and_column(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("time,a,b\n0,1,2\n0.1,,3\n")
    with pytest.raises(ds.IngestionError, match=r"row 3, column 'a'"):
        ds.load_trace(p, 1)
    p.write_text("time,a\n0,x\n")
    with pytest.raises(ds.IngestionError, match="non-numeric"):
        ds.load_trace(p, 1)
    p.write_text("t,a\n0,1\n")
    with pytest.raises(ds.IngestionError, match="time"):
        ds.load_trace(p, 1)


def test_save_load_round_trip(tmp_path):
    tr = _trace(np.random.default_rng(2).normal(size=(12, 2)), 4)
    back = ds.load_trace(ds.save_trace(tmp_path / "t.csv", tr), 3)
    assert np.array_equal(back.values, tr.values)
    assert back.variable_names == tr.variable_names


def test_normalize_examples():
    tr = _trace([1, 3, 5], 1)
    norm, _ = ds.fit_normalize(tr, slice(None))
    assert norm.values[:, 0].tolist() == [0.0, 0.5, 1.0]
    idle, _ = ds.fit_normalize(_trace([2, 2, 2], 1), slice(None))
    assert idle.values[:, 0].tolist() == [0.0, 0.0, 0.0]
    held, rec = ds.fit_normalize(tr, slice(0, 2))
    assert held.values[:, 0].tolist() == [0.0, 1.0, 2.0]  # no clamping
    assert np.allclose(rec.invert(held.values), tr.values)


def test_split_examples():
    for N in (2091, 2, 1):
        tr = _trace(np.arange(3 * N), N)
        train, test = ds.split(tr)
        assert len(train) == 2 * N and len(test) == N
        assert test[0, 0] == 2 * N
    with pytest.raises(ValueError):
        ds.split(_trace(np.arange(4), 2, R=2))


def test_windowize_counts():
    assert len(ds.windowize(np.zeros((4182, 2)), 10, 3)) == 4170
    assert len(ds.windowize(np.zeros((13, 1)), 10, 3)) == 1
    with pytest.raises(ValueError, match="empty batch"):
        ds.windowize(np.zeros((12, 1)), 10, 3)


def test_windowize_matches_loop_oracle():
    rows = np.random.default_rng(5).normal(size=(30, 3))
    b = ds.windowize(rows, 4, 2)
    ref = oracles.windows_loop(rows, 4, 2)
    assert b.origins.tolist() == [t for t, _, _ in ref]
    for i, (_, x, y) in enumerate(ref):
        assert np.array_equal(b.inputs[i], np.array(x).T)
        assert np.array_equal(b.targets[i], np.array(y).T)


def test_validation_sample_sizes_and_determinism():
    b = ds.windowize(np.zeros((4182, 1)), 10, 3)
    tr, va = ds.validation_sample(b, 0.10, seed=1)
    assert len(va) == 417 and len(tr) == 4170 - 417
    small = ds.windowize(np.zeros((22, 1)), 10, 3)
    assert len(small) == 10 and len(ds.validation_sample(small, 0.10, 0)[1]) == 1
    tr2, va2 = ds.validation_sample(b, 0.10, seed=1)
    assert np.array_equal(va.origins, va2.origins)
    assert set(tr.origins).isdisjoint(va.origins)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 10), st.integers(1, 5))
def test_window_count_property(N, L, H):
    M = 2 * N
    if M < L + H:
        with pytest.raises(ValueError):
            ds.windowize(np.zeros((M, 1)), L, H)
    else:
        assert len(ds.windowize(np.zeros((M, 1)), L, H)) == 2 * N - L - H + 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=30))
def test_normalized_fit_rows_in_unit_interval(col):
    tr = _trace(col[: len(col) // 3 * 3], len(col) // 3)
    norm, _ = ds.fit_normalize(tr, slice(None))
    assert norm.values.min() >= 0.0 and norm.values.max() <= 1.0
