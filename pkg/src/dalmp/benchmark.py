"""Out-of-sample comparison of the DL forecaster against Models 1-3.

The DL forecaster is trained once on everything before the test window;
Models 1-3 are refitted every test day on all data available up to that day.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import baselines as bl
from .data import (ExogenousFrame, HourlySeries, Standardizer, build_examples, day_starts,
                   forecast_input, hourly_features, log_transform)
from .forecaster import (ForecasterWeights, NetworkConfig, TrainConfig, TrainResult,
                         build_forecaster, forward, predict, stack_examples, train)
from .metrics import EvalReport

MODEL_NAMES = ("model1", "model2", "model3", "dl")


@dataclass(frozen=True)
class BenchmarkConfig:
    test_days: int = 7
    network: NetworkConfig = NetworkConfig()
    training: TrainConfig = TrainConfig()
    stateless_training: TrainConfig = TrainConfig(max_epochs=60, patience=5)
    stateless_refit: TrainConfig = TrainConfig(max_epochs=15, patience=3)
    stateless_batch: int = 256
    seasonal_mode: str = "multiplicative"
    seed: int = 0


def compact_config(seed: int = 0, test_days: int = 7) -> BenchmarkConfig:
    """A benchmark setting that trains in about a minute on one CPU core.

    Narrower LSTM (32 units) with smaller batches and a higher learning rate,
    plus 8 exogenous filters (the exogenous branch is otherwise a 3-unit
    bottleneck).
    """
    return BenchmarkConfig(
        test_days=test_days,
        network=NetworkConfig(lstm_units=32, c_f=8, batch_size=16),
        training=TrainConfig(max_epochs=150, patience=40, learning_rate=3e-3, rng_seed=seed),
        seed=seed,
    )


@dataclass
class BenchmarkResult:
    timestamps: list[datetime]
    actual: np.ndarray
    forecasts: dict[str, np.ndarray]
    reports: list[EvalReport]
    dl: TrainResult
    scaler: Standardizer
    validation_residuals: np.ndarray = field(repr=False)

    def report(self, model: str) -> EvalReport:
        return next(r for r in self.reports if r.model == model)


def train_dl(prices: HourlySeries, exo: ExogenousFrame, network: NetworkConfig,
             training: TrainConfig, seed: int):
    """Train the DL forecaster; returns (TrainResult, scaler, validation log residuals)."""
    ds = build_examples(prices, exo, network, training.validation_fraction)
    weights = build_forecaster(network, seed, ds.reference_level)
    result = train(weights, ds.examples, training)
    result.weights.extras["scaler.mean"] = ds.scaler.mean
    result.weights.extras["scaler.std"] = ds.scaler.std
    val = ds.examples[ds.n_train:]
    z, x, y = stack_examples(val)
    residuals = (y - forward(result.weights, z, x)).ravel()
    return result, ds.scaler, residuals


def dl_forecast(weights: ForecasterWeights, scaler: Standardizer, history: HourlySeries,
                future_exo: ExogenousFrame) -> np.ndarray:
    z, x = forecast_input(history, future_exo, weights.config, scaler)
    return predict(weights, z, x)


def run_benchmark(prices: HourlySeries, exo: ExogenousFrame, cfg: BenchmarkConfig = BenchmarkConfig(),
                  models=MODEL_NAMES) -> BenchmarkResult:
    n = len(prices)
    n_test = 24 * cfg.test_days
    test_start = n - n_test
    starts = [s for s in day_starts(prices.start, n) if s >= test_start]
    if len(starts) != cfg.test_days or starts[0] != test_start:
        raise bl.InsufficientDataError("test window must be whole days at the end of the data")
    if test_start < cfg.network.n_z + 24 * 30:
        raise bl.InsufficientDataError("not enough history before the test window")

    train_prices, train_exo = prices.window(0, test_start), exo.window(0, test_start)
    dl_result, scaler, residuals = train_dl(train_prices, train_exo, cfg.network, cfg.training, cfg.seed)

    logp = log_transform(prices).values
    raw_exo = exo.matrix()
    feats = hourly_features(exo, scaler)
    forecasts = {m: np.empty(n_test) for m in models}
    stateless = None
    for d, s in enumerate(starts):
        out = slice(24 * d, 24 * (d + 1))
        if "dl" in models:
            forecasts["dl"][out] = dl_forecast(dl_result.weights, scaler, prices.window(0, s), exo.window(s, s + 24))
        if "model1" in models:
            forecasts["model1"][out] = bl.forecast_recursive(bl.fit_ar(logp[:s]), logp[:s])
        if "model2" in models:
            m2 = bl.fit_sarx(logp[:s], raw_exo[:s], mode=cfg.seasonal_mode)
            forecasts["model2"][out] = bl.forecast_recursive(m2, logp[:s], raw_exo[s:s + 24], raw_exo[:s])
        if "model3" in models:
            tc = cfg.stateless_training if stateless is None else cfg.stateless_refit
            stateless = bl.fit_stateless(feats[:s], logp[:s], seed=cfg.seed, tc=tc,
                                         batch_size=cfg.stateless_batch,
                                         init=None if stateless is None else stateless.net)
            forecasts["model3"][out] = stateless.net.predict(feats[s:s + 24])

    actual = prices.values[test_start:]
    reports = [EvalReport.from_forecasts(m, actual, forecasts[m]) for m in models]
    stamps = [prices.timestamp(i) for i in range(test_start, n)]
    return BenchmarkResult(stamps, actual, forecasts, reports, dl_result, scaler, residuals)
