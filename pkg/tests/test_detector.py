import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracecast import detector as det

import oracles


def _fs(values_by_origin, num_rows, D=1):
    origins = np.array(sorted(values_by_origin))
    f = np.stack([np.asarray(values_by_origin[t], dtype=float).reshape(D, -1) for t in origins])
    return det.ForecastSet(f, origins, num_rows)


def test_uniform_mean_over_leads():
    # row 3 is forecast by origins 0..3 at leads 4..1 with values 1..4
    fs = _fs({0: [0, 0, 0, 1], 1: [0, 0, 2, 0], 2: [0, 3, 0, 0], 3: [4, 0, 0, 0]}, 8)
    est = det.aggregate(fs)
    assert est.values[3, 0] == pytest.approx(2.5)
    assert est.coverage[3] == 4
    assert est.values[0, 0] == 0.0 and est.coverage[0] == 1
    assert sorted(fs.coverage()[3]) == [(0, 4), (1, 3), (2, 2), (3, 1)]


@pytest.mark.parametrize("seed", range(10))
def test_streaming_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    H, D, n = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 30))
    origins = np.sort(rng.choice(np.arange(40), n, replace=False))
    fs = det.ForecastSet(rng.normal(size=(n, D, H)), origins, 40)
    est = det.aggregate(fs)
    vals, counts = oracles.aggregate_bruteforce(fs.forecasts, fs.origins, 40)
    assert np.array_equal(est.coverage, counts)
    assert np.allclose(est.values, vals, rtol=0, atol=1e-10, equal_nan=True)


def test_streaming_emits_final_rows_in_order():
    agg = det.ForecastAggregator(10, 1)
    out = []
    for t in range(0, 8):
        out += agg.push(t, np.ones((1, 3)) * t)
    out += agg.flush()
    assert [r for r, _ in out] == list(range(10))
    with pytest.raises(ValueError):
        agg.push(3, np.ones((1, 3)))


def _const_predict(x):
    # lead h forecast = last observed value + h
    return x[:, :, -1:] + np.arange(1, 4)


def test_reference_examples():
    rng = np.random.default_rng(0)
    run = rng.random((30, 2))
    ref = det.reference_forecast(_const_predict, np.concatenate([run, run]), 30, 5, 3)
    one = det.run_estimates(_const_predict, run, 5, 3)
    assert np.array_equal(ref.values, one.values, equal_nan=True)
    rep = det.score(det.run_estimates(_const_predict, run, 5, 3), ref)
    assert rep.flags.sum() == 0 and np.all(rep.scores == 0)
    other = run + rng.normal(0, 0.1, run.shape)
    ref2 = det.reference_forecast(_const_predict, np.concatenate([run, other]), 30, 5, 3)
    a = one.values
    b = det.run_estimates(_const_predict, other, 5, 3).values
    ok = ~np.isnan(a[:, 0])
    lo, hi = np.minimum(a, b)[ok], np.maximum(a, b)[ok]
    assert np.all((ref2.values[ok] >= lo - 1e-15) & (ref2.values[ok] <= hi + 1e-15))


def _est(rows):
    rows = np.asarray(rows, dtype=float)
    return det.Estimates(rows, np.ones(len(rows), dtype=int))


def test_score_examples():
    test = _est([[0.02, 0.15, 0.07, 0.0]])
    ref = _est([[0.0, 0.0, 0.0, 0.0]])
    r1 = det.score(test, ref, b=1, th=0.1)
    assert r1.scores[0] == pytest.approx(0.15) and r1.flags[0]
    assert r1.argmax_variable[0] == 1
    r2 = det.score(test, ref, b=2, th=0.1)
    assert r2.scores[0] == pytest.approx(0.11) and r2.flags[0]
    with pytest.raises(ValueError, match="misaligned"):
        det.score(test, _est([[0, 0, 0]]))


def test_uncovered_rows_are_excluded():
    vals = np.array([[np.nan], [0.5], [0.0]])
    test = det.Estimates(vals, np.array([0, 1, 1]))
    ref = det.Estimates(np.zeros((3, 1)), np.array([0, 1, 1]))
    rep = det.score(test, ref, labels=[1, 1, 0])
    assert rep.rows.tolist() == [1, 2] and rep.flags.tolist() == [True, False]
    assert rep.f1 == 1.0


def test_evaluate_examples():
    flags = [1] * 8 + [1] * 2 + [0] * 2 + [0] * 5
    labels = [1] * 8 + [0] * 2 + [1] * 2 + [0] * 5
    assert det.evaluate(flags, labels) == pytest.approx((0.8, 0.8, 0.8))
    assert det.evaluate([0, 0], [0, 0]) == (0.0, 0.0, 0.0)
    assert det.evaluate([1, 1, 1, 1], [1, 1, 0, 0]) == pytest.approx((0.5, 1.0, 2 / 3))


def test_mse_examples():
    assert det.mse_loss(np.ones((3, 2, 2)), np.ones((3, 2, 2))) == 0.0
    f = np.array([[[0.1, 0.2]]])
    assert det.mse_loss(f, np.zeros_like(f)) == pytest.approx(0.05)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(7, 3, 4)), rng.normal(size=(7, 3, 4))
    assert det.mse_loss(a, b) == pytest.approx(oracles.mse_loop(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.floats(0, 1), st.floats(0, 1))
def test_threshold_and_b_monotone(seed, b, th1, th2):
    rng = np.random.default_rng(seed)
    dev = rng.random((20, 5))
    test, ref = _est(dev), _est(np.zeros((20, 5)))
    lo, hi = sorted((th1, th2))
    assert det.score(test, ref, 1, hi).flags.sum() <= det.score(test, ref, 1, lo).flags.sum()
    assert np.all(det.score(test, ref, 1).scores >= det.score(test, ref, b).scores - 1e-15)


def test_report_files(tmp_path):
    test, ref = _est([[0.3, 0.0], [0.0, 0.0]]), _est(np.zeros((2, 2)))
    rep = det.score(test, ref, labels=[1, 0])
    lines = rep.to_csv(tmp_path / "r.csv", ["a", "b"]).read_text().splitlines()
    assert lines[0] == "time,score,flag,label,argmax_variable,a,b"
    assert lines[1].split(",")[2:5] == ["1", "1", "a"]
    summ = rep.write_summary(tmp_path / "s.json").read_text()
    assert '"f1": 1.0' in summ and "partial_coverage_rows" in summ
    paths = det.write_plot_data(tmp_path / "plot", ["a", "b"], np.zeros((2, 2)), test, ref, rep)
    assert len(paths) == 2
