"""Forecast accuracy metrics on prices ($/MWh)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


def _pair(actual, forecast):
    a = np.asarray(actual, dtype=np.float64).ravel()
    f = np.asarray(forecast, dtype=np.float64).ravel()
    if a.size != f.size:
        raise MetricError(f"length mismatch: {a.size} actuals vs {f.size} forecasts")
    if a.size == 0:
        raise MetricError("no forecast points")
    return a, f


def mse(actual, forecast) -> float:
    """Mean squared error."""
    a, f = _pair(actual, forecast)
    return float(np.mean((a - f) ** 2))


def mape(actual, forecast) -> float:
    """Mean absolute percentage error, in percent."""
    a, f = _pair(actual, forecast)
    if np.any(a == 0):
        raise MetricError("actual values contain zero; MAPE is undefined")
    return float(np.mean(100.0 * np.abs(a - f) / np.abs(a)))


@dataclass
class EvalReport:
    model: str
    mse: float
    mape: float
    n: int
    hourly_error: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @classmethod
    def from_forecasts(cls, model: str, actual, forecast) -> "EvalReport":
        a, f = _pair(actual, forecast)
        return cls(model, mse(a, f), mape(a, f), a.size, f - a)


def write_reports(path, reports: Sequence[EvalReport]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mse", "mape", "n"])
        for r in reports:
            w.writerow([r.model, repr(r.mse), repr(r.mape), r.n])


def read_reports(path) -> list[EvalReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [EvalReport(row["model"], float(row["mse"]), float(row["mape"]), int(row["n"]))
                for row in csv.DictReader(fh)]
