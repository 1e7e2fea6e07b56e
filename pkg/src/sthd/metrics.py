"""Error metrics over whole test sets, plus the Naive and Linear baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .data import make_windows
from .nn import Adam, Linear
from .tensor import Tensor

METRICS = ("rmse", "wrmspe", "mae", "wape")


class MetricError(ValueError):
    pass


class NotApplicable(ValueError):
    """The baseline cannot produce a forecast for this configuration."""


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """Matched (n, tau) predictions and truths in original units."""

    predictions: np.ndarray
    truths: np.ndarray
    provenance: np.ndarray = None

    def __post_init__(self):
        pred = np.atleast_2d(np.asarray(self.predictions, dtype=np.float64))
        truth = np.atleast_2d(np.asarray(self.truths, dtype=np.float64))
        if pred.shape != truth.shape:
            raise MetricError(f"predictions {pred.shape} and truths {truth.shape} differ in shape")
        if pred.size == 0:
            raise MetricError("empty forecast set")
        if self.provenance is not None and len(self.provenance) != len(pred):
            raise MetricError(f"{len(self.provenance)} provenance rows for {len(pred)} forecasts")
        object.__setattr__(self, "predictions", pred)
        object.__setattr__(self, "truths", truth)

    @property
    def errors(self):
        return self.truths - self.predictions


def rmse(fs):
    return float(np.sqrt(np.mean(fs.errors**2)))


def mae(fs):
    return float(np.mean(np.abs(fs.errors)))


def _abs_total(fs, name):
    total = float(np.sum(np.abs(fs.truths)))
    if total == 0.0:
        raise MetricError(f"{name} is undefined when every truth is zero")
    return total


def wape(fs):
    """Sum of absolute errors over the sum of absolute truths."""
    return float(np.sum(np.abs(fs.errors))) / _abs_total(fs, "wape")


def wrmspe(fs):
    """RMSE divided by the mean absolute truth."""
    return rmse(fs) / (_abs_total(fs, "wrmspe") / fs.truths.size)


def all_metrics(fs):
    return {"rmse": rmse(fs), "wrmspe": wrmspe(fs), "mae": mae(fs), "wape": wape(fs)}


def naive_forecast(dataset, spec, range_name="test", variant="last"):
    """Repeat-last-value forecasts (``variant="last"``) for every window.

    ``variant="seasonal"`` repeats the last tau observed values instead and is
    not applicable when the input window is shorter than the horizon.
    """
    entries = make_windows(dataset, spec, range_name)
    L, tau = spec.input_length, spec.horizon
    ch, start = entries[:, 0], entries[:, 1]
    horizon_t = start[:, None] + L + np.arange(tau)
    truths = dataset.values[ch[:, None], horizon_t]
    if variant == "last":
        preds = np.repeat(dataset.values[ch, start + L - 1][:, None], tau, axis=1)
    elif variant == "seasonal":
        if L < tau:
            raise NotApplicable(f"seasonal naive needs input length >= horizon, got L={L} < tau={tau}")
        preds = dataset.values[ch[:, None], start[:, None] + L - tau + np.arange(tau)]
    else:
        raise ValueError(f"unknown naive variant {variant!r}")
    return ForecastSet(preds, truths, entries)


class LinearForecaster:
    """One global linear map from L normalized inputs to tau outputs."""

    def __init__(self, input_length, horizon, seed=0):
        rng = np.random.default_rng(seed)
        self.layer = Linear(input_length, horizon, rng)
        self.seed = seed

    def fit(self, X, Y, epochs=50, batch_size=128, lr=0.01):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        opt = Adam(self.layer.parameters(), lr=lr)
        history = []
        for epoch in range(epochs):
            order = np.random.default_rng([self.seed, epoch]).permutation(len(X))
            total = 0.0
            for lo in range(0, len(X), batch_size):
                idx = order[lo : lo + batch_size]
                opt.zero_grad()
                loss = tn.mse(self.layer(Tensor(X[idx])), Tensor(Y[idx]))
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            history.append(total / len(X))
        return history

    def predict(self, X):
        with tn.no_grad():
            return self.layer(Tensor(np.asarray(X, dtype=np.float64))).data

    @property
    def weights(self):
        return self.layer.weight.data


def _windows_normalized(dataset, normalizer, spec, range_name):
    entries = make_windows(dataset, spec, range_name)
    z = normalizer.normalize(dataset.values)
    ch, start = entries[:, 0], entries[:, 1]
    L, tau = spec.input_length, spec.horizon
    X = z[ch[:, None], start[:, None] + np.arange(L)]
    Y = z[ch[:, None], start[:, None] + L + np.arange(tau)]
    return entries, X, Y


def linear_forecast(dataset, normalizer, spec, range_name="test", seed=0, epochs=50, batch_size=128, lr=0.01):
    """Train the Linear baseline on all training windows and forecast ``range_name``."""
    _, X, Y = _windows_normalized(dataset, normalizer, spec, "train")
    model = LinearForecaster(spec.input_length, spec.horizon, seed)
    model.fit(X, Y, epochs=epochs, batch_size=batch_size, lr=lr)
    entries, Xe, Ye = _windows_normalized(dataset, normalizer, spec, range_name)
    ch = entries[:, 0]
    preds = normalizer.denormalize(model.predict(Xe), ch)
    truths = normalizer.denormalize(Ye, ch)
    return ForecastSet(preds, truths, entries), model
