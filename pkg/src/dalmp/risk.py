"""Profit risk of running a gas unit through a day-ahead block.

Log-price forecast errors are modelled as independent N(0, sigma^2) per hour,
so the hourly price is lognormal around the forecast. The hourly margin is
``C * (P - HR * G)``; the start-up cost ``SC`` is charged once per block.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class InvalidSpecError(ValueError):
    pass


class InsufficientResidualsError(ValueError):
    pass


class InvalidHoursError(ValueError):
    pass


class Recommendation(str, enum.Enum):
    RUN = "RUN"
    SHUTDOWN = "SHUTDOWN"


@dataclass(frozen=True)
class RiskSpec:
    capacity_mw: float
    heat_rate: float          # MMBtu/MWh
    gas_price: float          # $/MMBtu
    startup_cost: float       # $
    sigma: float              # std of log-price forecast error
    confidence_threshold: float = 0.90

    def validate(self) -> "RiskSpec":
        problems = []
        if not self.capacity_mw > 0:
            problems.append("capacity_mw must be > 0")
        if not self.heat_rate > 0:
            problems.append("heat_rate must be > 0")
        if not self.gas_price >= 0:
            problems.append("gas_price must be >= 0")
        if not self.startup_cost >= 0:
            problems.append("startup_cost must be >= 0")
        if not self.sigma >= 0:
            problems.append("sigma must be >= 0")
        if not 0.0 < self.confidence_threshold < 1.0:
            problems.append("confidence_threshold must lie in (0, 1)")
        if problems:
            raise InvalidSpecError("; ".join(problems))
        return self

    @property
    def breakeven(self) -> float:
        """Fuel cost of one MWh, HR * G ($/MWh)."""
        return self.heat_rate * self.gas_price


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def estimate_sigma(residuals: Sequence[float], min_count: int = 30) -> float:
    """Root mean square of log residuals (zero-mean error model)."""
    r = np.asarray(residuals, dtype=np.float64).ravel()
    if r.size < min_count:
        raise InsufficientResidualsError(f"need at least {min_count} residuals, got {r.size}")
    return float(np.sqrt(np.mean(r * r)))


def hourly_loss_probability(mu_log: float, spec: RiskSpec) -> float:
    """P(price < HR * G) when log price ~ N(mu_log, sigma^2)."""
    spec.validate()
    be = spec.breakeven
    if be <= 0:
        return 0.0
    if spec.sigma == 0:
        return 1.0 if mu_log < math.log(be) else 0.0
    return normal_cdf((math.log(be) - mu_log) / spec.sigma)


def _validate_hours(hours: Sequence[int], n: int) -> list[int]:
    hours = list(hours)
    if not hours or len(set(hours)) != len(hours) or any(not 1 <= h <= n for h in hours):
        raise InvalidHoursError(f"hours must be distinct values in 1..{n}, got {hours}")
    return sorted(hours)


@dataclass
class BlockProfit:
    samples: np.ndarray = field(repr=False)
    quantiles: dict[float, float]
    expected: float
    p_loss: float


def block_profit_distribution(mu_log: Sequence[float], hours: Sequence[int], spec: RiskSpec,
                              n_samples: int = 100_000, seed: int = 0, n_shards: int = 1,
                              quantile_levels=(0.05, 0.5, 0.95)) -> BlockProfit:
    """Monte Carlo distribution of block profit sum_h C (P_h - HR G) - SC.

    Samples are drawn in ``n_shards`` independently seeded shards and
    concatenated in shard order, so the result depends only on
    (seed, n_samples, n_shards).
    """
    spec.validate()
    mu = np.asarray(mu_log, dtype=np.float64).ravel()
    idx = np.array(_validate_hours(hours, mu.size)) - 1
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 10000, got {n_samples}")
    if n_shards < 1:
        raise ValueError("n_shards must be >= 1")
    sizes = [n_samples // n_shards + (1 if i < n_samples % n_shards else 0) for i in range(n_shards)]
    children = np.random.SeedSequence(seed).spawn(n_shards)
    shards = []
    for size, child in zip(sizes, children):
        eps = np.random.default_rng(child).standard_normal((size, idx.size))
        prices = np.exp(mu[idx] + spec.sigma * eps)
        shards.append(spec.capacity_mw * (prices - spec.breakeven).sum(axis=1) - spec.startup_cost)
    samples = np.concatenate(shards)
    quantiles = {q: float(v) for q, v in zip(quantile_levels, np.quantile(samples, quantile_levels))}
    return BlockProfit(samples, quantiles, float(samples.mean()), float(np.mean(samples < 0)))


def recommend_shutdown(p_loss: float, spec: RiskSpec) -> Recommendation:
    """SHUTDOWN only when P(block profit < 0) strictly exceeds the threshold."""
    return Recommendation.SHUTDOWN if p_loss > spec.confidence_threshold else Recommendation.RUN


@dataclass
class RiskReport:
    prices: np.ndarray
    breakeven: float
    hourly_p_loss: np.ndarray
    block: BlockProfit
    hours: list[int]
    recommendation: Recommendation
    timestamps: list[str] | None = None

    @property
    def trigger_probability(self) -> float:
        return self.block.p_loss

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour", "timestamp", "forecast_price", "breakeven_price", "p_hourly_loss", "in_block"])
            for h in range(len(self.prices)):
                stamp = self.timestamps[h] if self.timestamps else ""
                w.writerow([h + 1, stamp, f"{self.prices[h]:.2f}", f"{self.breakeven:.2f}",
                            f"{self.hourly_p_loss[h]:.4f}", int(h + 1 in self.hours)])

    def summary(self) -> str:
        q = self.block.quantiles
        lines = [
            f"block hours: {self.hours[0]}-{self.hours[-1]} ({len(self.hours)} h)",
            f"expected profit: ${self.block.expected:.2f}",
            *(f"profit q{int(round(100 * k)):02d}: ${v:.2f}" for k, v in q.items()),
            f"P(block profit < 0): {self.block.p_loss:.4f}",
            f"recommendation: {self.recommendation.value} (P(loss) = {self.trigger_probability:.4f})",
        ]
        return "\n".join(lines) + "\n"


def assess(mu_log: Sequence[float], spec: RiskSpec, hours: Sequence[int] | None = None,
           n_samples: int = 100_000, seed: int = 0, n_shards: int = 1,
           timestamps: Sequence[str] | None = None) -> RiskReport:
    """Hourly loss probabilities, block profit distribution and run/shutdown call."""
    spec.validate()
    mu = np.asarray(mu_log, dtype=np.float64).ravel()
    hours = _validate_hours(range(1, mu.size + 1) if hours is None else hours, mu.size)
    hourly = np.array([hourly_loss_probability(m, spec) for m in mu])
    block = block_profit_distribution(mu, hours, spec, n_samples, seed, n_shards)
    return RiskReport(np.exp(mu), spec.breakeven, hourly, block, hours,
                      recommend_shutdown(block.p_loss, spec),
                      list(timestamps) if timestamps is not None else None)
