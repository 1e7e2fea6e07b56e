import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthd.data import MtsDataset, SyntheticSpec, WindowSpec, fit_normalizer, generate_synthetic
from sthd.metrics import (
    ForecastSet,
    LinearForecaster,
    MetricError,
    NotApplicable,
    all_metrics,
    linear_forecast,
    mae,
    naive_forecast,
    rmse,
    wape,
    wrmspe,
)


def hand_metrics(pred, truth):
    """Flattened loops over every entry."""
    p = [v for row in pred for v in row]
    y = [v for row in truth for v in row]
    n = len(p)
    abs_err = sum(abs(a - b) for a, b in zip(y, p))
    sq_err = sum((a - b) ** 2 for a, b in zip(y, p))
    abs_y = sum(abs(a) for a in y)
    r = math.sqrt(sq_err / n)
    return {"rmse": r, "mae": abs_err / n, "wape": abs_err / abs_y, "wrmspe": r / (abs_y / n)}


def test_worked_example():
    fs = ForecastSet([[1.0, 3.0]], [[2.0, 2.0]])
    assert all_metrics(fs) == {"rmse": 1.0, "wrmspe": 0.5, "mae": 1.0, "wape": 0.5}


def test_frozen_values():
    fs = ForecastSet([[0.0, 1.0], [2.0, 2.0]], [[1.0, 1.0], [4.0, -2.0]])
    m = all_metrics(fs)
    # errors 1, 0, 2, -4 ; |truth| sum 8
    assert m["mae"] == 1.75
    assert m["rmse"] == pytest.approx(math.sqrt(21 / 4), abs=1e-15)
    assert m["wape"] == 7 / 8
    assert m["wrmspe"] == pytest.approx(math.sqrt(21 / 4) / 2, abs=1e-15)


@pytest.mark.parametrize("seed", range(8))
def test_against_hand_arithmetic(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 6)), int(rng.integers(1, 5)))
    pred, truth = rng.normal(size=shape) * 10, rng.normal(size=shape) * 10
    got = all_metrics(ForecastSet(pred, truth))
    want = hand_metrics(pred.tolist(), truth.tolist())
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-12)


def test_perfect_forecast_is_zero():
    y = np.arange(1.0, 7.0).reshape(2, 3)
    assert set(all_metrics(ForecastSet(y, y)).values()) == {0.0}


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_scale_homogeneity(c, seed):
    rng = np.random.default_rng(seed)
    pred, truth = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) + 0.1
    a = all_metrics(ForecastSet(pred, truth))
    b = all_metrics(ForecastSet(c * pred, c * truth))
    assert b["rmse"] == pytest.approx(c * a["rmse"], rel=1e-12)
    assert b["mae"] == pytest.approx(c * a["mae"], rel=1e-12)
    assert b["wape"] == pytest.approx(a["wape"], rel=1e-12)
    assert b["wrmspe"] == pytest.approx(a["wrmspe"], rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), grow=st.floats(1.01, 5.0))
def test_monotone_in_error_size(seed, grow):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(3, 4)) + 0.5
    err = rng.normal(size=(3, 4))
    small = all_metrics(ForecastSet(truth + err, truth))
    big = all_metrics(ForecastSet(truth + grow * err, truth))
    assert all(big[k] > small[k] for k in small)


def test_zero_truth_rejected():
    fs = ForecastSet([[1.0, 2.0]], [[0.0, 0.0]])
    assert rmse(fs) == pytest.approx(math.sqrt(2.5))
    assert mae(fs) == 1.5
    with pytest.raises(MetricError, match="wape"):
        wape(fs)
    with pytest.raises(MetricError, match="wrmspe"):
        wrmspe(fs)


def test_forecast_set_validation():
    with pytest.raises(MetricError, match="shape"):
        ForecastSet(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(MetricError, match="empty"):
        ForecastSet(np.zeros((0, 3)), np.zeros((0, 3)))


def series_dataset(rows, split):
    rows = np.asarray(rows, dtype=float)
    return MtsDataset(rows, tuple(f"c{i}" for i in range(len(rows))), split)


def test_naive_on_constant_series_is_exact():
    ds = series_dataset([[7.0] * 20], (10, 14))
    fs = naive_forecast(ds, WindowSpec(3, 3), "test")
    assert np.all(fs.predictions == 7.0) and np.all(fs.truths == 7.0)
    assert mae(fs) == 0.0


def test_naive_ramp_errors():
    # y_t = t ; last observed value is start + L - 1, so errors are 1, 2
    ds = series_dataset([np.arange(20.0)], (10, 14))
    fs = naive_forecast(ds, WindowSpec(3, 2), "test")
    np.testing.assert_array_equal(fs.errors, np.tile([1.0, 2.0], (len(fs.errors), 1)))
    assert mae(fs) == 1.5


def test_naive_windows_per_channel():
    ds = series_dataset([np.arange(20.0), -np.arange(20.0)], (10, 14))
    fs = naive_forecast(ds, WindowSpec(3, 2), "test")
    assert fs.predictions.shape == (2 * (6 - 5 + 1), 2)
    assert fs.provenance[:, 0].tolist() == [0, 0, 1, 1]


def test_seasonal_naive():
    ds = series_dataset([np.tile([1.0, 2.0, 3.0], 8)], (6, 12))
    fs = naive_forecast(ds, WindowSpec(6, 3), "test", variant="seasonal")
    np.testing.assert_array_equal(fs.predictions, fs.truths)
    with pytest.raises(NotApplicable, match="L=2 < tau=3"):
        naive_forecast(ds, WindowSpec(2, 3), "test", variant="seasonal")


def test_linear_learns_persistence_on_random_walk():
    rng = np.random.default_rng(0)
    X = np.cumsum(rng.normal(size=(2000, 6)), axis=1)
    Y = X[:, -1:] + 0.0
    model = LinearForecaster(6, 1, seed=0)
    hist = model.fit(X, Y, epochs=60, batch_size=64, lr=0.02)
    assert hist[-1] < 0.01
    w = model.weights[:, 0]
    assert np.argmax(np.abs(w)) == 5 and w[5] == pytest.approx(1.0, abs=0.05)


def test_linear_forecast_beats_naive_on_sinusoid():
    ds = generate_synthetic(SyntheticSpec(M=3, T=300, noise_std=0.05, seed=2, n_waves=1))
    spec = WindowSpec(24, 6)
    fs, _ = linear_forecast(ds, fit_normalizer(ds), spec, "test", seed=0, epochs=40)
    assert mae(fs) < mae(naive_forecast(ds, spec, "test"))


def test_linear_forecast_deterministic():
    ds = generate_synthetic(SyntheticSpec(M=2, T=120, noise_std=0.1, seed=3))
    spec = WindowSpec(8, 2)
    a, _ = linear_forecast(ds, fit_normalizer(ds), spec, seed=4, epochs=3)
    b, _ = linear_forecast(ds, fit_normalizer(ds), spec, seed=4, epochs=3)
    assert a.predictions.tobytes() == b.predictions.tobytes()
