"""Walk through a day-ahead forecast on a synthetic market.

Generates 60 days of hourly data, trains a small forecaster on everything but
the last day, forecasts that day, and compares the result with the three
baselines. Runs in well under a minute.

    python demos/forecast_walkthrough.py
"""
import numpy as np

from dalmp import baselines as bl
from dalmp import benchmark as bm
from dalmp import data, metrics, synthetic
from dalmp.forecaster import NetworkConfig, TrainConfig


def main():
    prices, exo, truth = synthetic.generate_market(synthetic.MarketParams(seed=1), 60)
    print(f"market: {len(prices)} hours from {data.format_timestamp(prices.start)}")
    print(f"price median {np.median(prices.values):.1f} $/MWh, max {prices.values.max():.1f} $/MWh")

    # Everything before the last day is history; the last day is what we forecast.
    cut = len(prices) - 24
    history, future = prices.window(0, cut), exo.window(cut, len(prices))

    network = NetworkConfig(lstm_units=16, c_f=8, batch_size=16)
    training = TrainConfig(max_epochs=60, patience=15, learning_rate=3e-3)
    result, scaler, _ = bm.train_dl(history, exo.window(0, cut), network, training, seed=0)
    print(f"trained {len(result.history)} epochs, best validation MAE (log) {result.best_val_mae:.4f}")

    actual = prices.values[cut:]
    logp = np.log(history.values)
    raw = exo.matrix()
    forecasts = {
        "dl": bm.dl_forecast(result.weights, scaler, history, future),
        "model1": bl.forecast_recursive(bl.fit_ar(logp), logp),
        "model2": bl.forecast_recursive(bl.fit_sarx(logp, raw[:cut]), logp, raw[cut:], raw[:cut]),
    }
    for name, fc in forecasts.items():
        report = metrics.EvalReport.from_forecasts(name, actual, fc)
        print(f"{name:>7}: MAPE {report.mape:6.2f} %   MSE {report.mse:9.1f}")

    print("\nhour  actual    dl  model2  noiseless")
    for h in range(0, 24, 3):
        print(f"{h:4d} {actual[h]:7.1f} {forecasts['dl'][h]:5.1f} {forecasts['model2'][h]:7.1f} "
              f"{truth.noiseless_price[cut + h]:10.1f}")


if __name__ == "__main__":
    main()
