"""Synthetic hourly market with known ground truth.

Temperatures drive zonal loads, loads add up to the RTO demand, and the RTO
demand sets the noiseless price through a convex supply stack::

    log p* = base + slope * u + convexity * max(u, 0)**2 + ramp * max(v, 0)
    u = (rto / ref - center) / scale,   v = (rto[t] - rto[t-1]) / ref / ramp_scale

The ramp term prices steep upward load ramps (units committed at short
notice), so the price at hour t also depends on the load of hour t-1.

The observed price multiplies ``p*`` by a persistent lognormal factor (an
hourly AR(1) in log space, think fuel-cost drift) and rare spikes. The
noiseless path depends on the exogenous columns only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .data import (HOUR, EXOGENOUS_COLUMNS, ExogenousFrame, HourlySeries,
                   format_timestamp, write_csv)

ZONES = ("aep", "aps", "dom", "midatl", "ekpc", "atsi", "comed", "duq")
CITIES = ("chicago", "cincinnati", "philadelphia", "pittsburgh")
ZONE_CITY = {"aep": "cincinnati", "aps": "pittsburgh", "dom": "philadelphia",
             "midatl": "philadelphia", "ekpc": "cincinnati", "atsi": "pittsburgh",
             "comed": "chicago", "duq": "pittsburgh"}
DEFAULT_START = datetime(2019, 8, 9, tzinfo=timezone.utc)


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class MarketParams:
    base_log_price: float = 3.3
    supply_slope: float = 0.25
    supply_convexity: float = 0.7
    # activity multipliers on load
    daily_amplitude: float = 0.18
    weekend_dip: float = 0.08
    # temperatures (deg F): annual mean, annual and daily swings, weather noise
    temp_mean: tuple[float, ...] = (50.0, 55.0, 56.0, 52.0)
    temp_annual_amp: float = 22.0
    temp_daily_amp: float = 8.0
    weather_sigma: float = 6.0
    weather_persistence: float = 0.97
    # zonal loads (MW): base level, then linear and quadratic response in (T - 65) / 10
    zone_base: tuple[float, ...] = (14000.0, 5500.0, 11000.0, 30000.0, 1500.0, 7500.0, 12000.0, 1600.0)
    load_linear: float = 0.02
    load_quadratic: float = 0.03
    other_share: float = 0.1
    zone_noise: float = 0.03
    # normalization of the aggregate load fed to the supply stack
    load_center: float = 1.1
    load_scale: float = 0.15
    ramp_premium: float = 0.15
    ramp_scale: float = 0.03
    # persistent log-price noise (stationary std) and its hourly AR(1) coefficient
    log_noise_sigma: float = 0.15
    noise_persistence: float = 0.999
    spike_probability: float = 0.002
    spike_min: float = 2.0
    spike_max: float = 5.0
    seed: int = 0

    def validate(self) -> "MarketParams":
        problems = []
        if self.log_noise_sigma < 0:
            problems.append("log_noise_sigma must be >= 0")
        if not 0.0 <= self.spike_probability < 1.0:
            problems.append("spike_probability must lie in [0, 1)")
        if not 1.0 <= self.spike_min <= self.spike_max:
            problems.append("need 1 <= spike_min <= spike_max")
        if not 0.0 <= self.noise_persistence < 1.0 or not 0.0 <= self.weather_persistence < 1.0:
            problems.append("persistence coefficients must lie in [0, 1)")
        if len(self.temp_mean) != len(CITIES):
            problems.append(f"temp_mean needs {len(CITIES)} entries")
        if len(self.zone_base) != len(ZONES) or min(self.zone_base) <= 0:
            problems.append(f"zone_base needs {len(ZONES)} positive entries")
        if self.load_scale <= 0 or self.ramp_scale <= 0:
            problems.append("load_scale and ramp_scale must be > 0")
        if self.weather_sigma < 0 or self.other_share < 0 or self.zone_noise < 0:
            problems.append("weather_sigma, other_share and zone_noise must be >= 0")
        if problems:
            raise InvalidParamsError("; ".join(problems))
        return self

    @property
    def reference_load(self) -> float:
        return sum(self.zone_base) * (1.0 + self.other_share)


@dataclass
class GroundTruth:
    noiseless_price: np.ndarray
    log_noise: np.ndarray
    spike_factor: np.ndarray = field(repr=False)


def _ar1(rng, n, phi, sigma):
    """Stationary AR(1) with marginal std ``sigma``."""
    out = np.empty(n)
    if n == 0:
        return out
    eps = rng.standard_normal(n)
    innov = sigma * np.sqrt(1.0 - phi * phi)
    out[0] = sigma * eps[0]
    for t in range(1, n):
        out[t] = phi * out[t - 1] + innov * eps[t]
    return out


def noiseless_log_price(rto: np.ndarray, params: MarketParams) -> np.ndarray:
    rel = rto / params.reference_load
    u = (rel - params.load_center) / params.load_scale
    v = np.diff(rel, prepend=rel[:1]) / params.ramp_scale
    return (params.base_log_price + params.supply_slope * u + params.supply_convexity * np.maximum(u, 0.0) ** 2
            + params.ramp_premium * np.maximum(v, 0.0))


def generate_market(params: MarketParams, n_days: int, start: datetime = DEFAULT_START):
    """Return ``(prices, exo, truth)`` for ``n_days`` of hourly data."""
    params.validate()
    if n_days < 30:
        raise InvalidParamsError(f"n_days must be >= 30, got {n_days}")
    n = 24 * n_days
    # independent streams so that e.g. noise settings do not shift the weather draw
    weather_rng, noise_rng, spike_rng = (np.random.default_rng(s)
                                         for s in np.random.SeedSequence(params.seed).spawn(3))

    hours = np.arange(n)
    stamps_hour = (start.hour + hours) % 24
    weekday = (start.weekday() + (start.hour + hours) // 24) % 7
    day_of_year = start.timetuple().tm_yday + (start.hour + hours) / 24.0

    annual = -np.cos(2 * np.pi * (day_of_year - 20.0) / 365.25)
    daily = np.cos(2 * np.pi * (stamps_hour - 15) / 24.0)
    temps = {}
    for city, mean in zip(CITIES, params.temp_mean):
        noise = _ar1(weather_rng, n, params.weather_persistence, params.weather_sigma)
        temps[city] = mean + params.temp_annual_amp * annual + params.temp_daily_amp * daily + noise

    # business activity: morning ramp, evening peak, night trough, weekend dip
    profile = np.sin(np.pi * np.clip(stamps_hour - 6, 0, 16) / 16.0) - 0.3
    activity = (1.0 + params.daily_amplitude * profile) * np.where(weekday >= 5, 1.0 - params.weekend_dip, 1.0)

    loads = {}
    for zone, base in zip(ZONES, params.zone_base):
        dev = (temps[ZONE_CITY[zone]] - 65.0) / 10.0
        idiosyncratic = _ar1(weather_rng, n, params.weather_persistence, params.zone_noise)
        loads[zone] = base * activity * (1.0 + params.load_linear * dev + params.load_quadratic * dev * dev
                                         + idiosyncratic)
    # zones outside the exogenous columns: own demand noise, so the RTO total is not collinear with the zones
    other_noise = _ar1(weather_rng, n, params.weather_persistence, params.zone_noise)
    rto = sum(loads.values()) + params.other_share * sum(params.zone_base) * activity * (1.0 + other_noise)

    noiseless = np.exp(noiseless_log_price(rto, params))
    log_noise = _ar1(noise_rng, n, params.noise_persistence, params.log_noise_sigma)
    spikes = np.where(spike_rng.random(n) < params.spike_probability,
                      spike_rng.uniform(params.spike_min, params.spike_max, n), 1.0)
    prices = noiseless * np.exp(log_noise) * spikes

    columns = {"rto_demand_mw": rto}
    columns.update({f"{z}_mw": loads[z] for z in ZONES})
    columns.update({f"{c}_f": temps[c] for c in CITIES})
    columns = {name: columns[name] for name in EXOGENOUS_COLUMNS}
    return (HourlySeries(start, prices), ExogenousFrame(start, columns),
            GroundTruth(noiseless, log_noise, spikes))


def write_market(directory, prices: HourlySeries, exo: ExogenousFrame, truth: GroundTruth,
                 name: str = "market") -> tuple[Path, Path]:
    """Write ``<name>.csv`` (the ingestion contract) and ``<name>_truth.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data_path = directory / f"{name}.csv"
    truth_path = directory / f"{name}_truth.csv"
    write_csv(data_path, exo, prices)
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "noiseless_price", "log_noise", "spike_factor"])
        for i in range(len(prices)):
            w.writerow([format_timestamp(prices.start + i * HOUR), repr(float(truth.noiseless_price[i])),
                        repr(float(truth.log_noise[i])), repr(float(truth.spike_factor[i]))])
    return data_path, truth_path
