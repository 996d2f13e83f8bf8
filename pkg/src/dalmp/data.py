"""Hourly CSV ingestion, log transform, calendar encoding and example windowing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .forecaster import NetworkConfig, TrainingExample, split_validation

HOUR = timedelta(hours=1)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

# Feature index -> name is fixed: these 13 columns, then 24 hour-of-day
# one-hots, then 7 day-of-week one-hots (Monday first).
EXOGENOUS_COLUMNS = (
    "rto_demand_mw", "aep_mw", "aps_mw", "dom_mw", "midatl_mw", "ekpc_mw",
    "atsi_mw", "comed_mw", "duq_mw",
    "chicago_f", "cincinnati_f", "philadelphia_f", "pittsburgh_f",
)
N_CALENDAR = 31


class DataError(ValueError):
    pass


class GapError(DataError):
    def __init__(self, missing: Sequence[datetime]):
        self.missing = list(missing)
        shown = ", ".join(format_timestamp(t) for t in self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"gap in hourly data, missing hours: {shown}{more}")


class DuplicateTimestampError(DataError):
    def __init__(self, duplicates: Sequence[datetime]):
        self.duplicates = list(duplicates)
        super().__init__("duplicate timestamps: " + ", ".join(format_timestamp(t) for t in self.duplicates[:10]))


class NonPositivePriceError(DataError):
    pass


class ColumnError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class DomainError(DataError):
    pass


def parse_timestamp(text: str) -> datetime:
    try:
        ts = datetime.strptime(text.strip(), TIMESTAMP_FORMAT)
    except ValueError:
        raise DataError(f"bad timestamp {text!r}, expected YYYY-MM-DDTHH:00:00Z") from None
    if ts.minute or ts.second:
        raise DataError(f"timestamp {text!r} is not on an hour boundary")
    return ts.replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


@dataclass
class HourlySeries:
    """Strictly consecutive hourly values starting at ``start`` (UTC)."""

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return len(self.values)

    def timestamp(self, i: int) -> datetime:
        return self.start + i * HOUR

    @property
    def timestamps(self) -> list[datetime]:
        return [self.start + i * HOUR for i in range(len(self))]

    def window(self, lo: int, hi: int) -> "HourlySeries":
        return HourlySeries(self.timestamp(lo), self.values[lo:hi].copy())


@dataclass
class ExogenousFrame:
    start: datetime
    columns: dict[str, np.ndarray]

    def __post_init__(self):
        self.columns = {k: np.asarray(v, dtype=np.float64) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise ColumnError(f"exogenous columns have unequal lengths {sorted(lengths)}")

    def __len__(self):
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def matrix(self) -> np.ndarray:
        return np.column_stack([self.columns[k] for k in self.columns])

    def window(self, lo: int, hi: int) -> "ExogenousFrame":
        return ExogenousFrame(self.start + lo * HOUR, {k: v[lo:hi].copy() for k, v in self.columns.items()})


@dataclass(frozen=True)
class CsvSchema:
    timestamp: str = "timestamp"
    price: str = "dalmp"
    exogenous: tuple[str, ...] = EXOGENOUS_COLUMNS
    require_price: bool = True

    @property
    def header(self) -> list[str]:
        return [self.timestamp, self.price, *self.exogenous]


DEFAULT_SCHEMA = CsvSchema()
EXOGENOUS_SCHEMA = CsvSchema(require_price=False)


def _check_continuity(stamps: list[datetime]) -> None:
    seen, dups = set(), []
    for t in stamps:
        if t in seen:
            dups.append(t)
        seen.add(t)
    if dups:
        raise DuplicateTimestampError(dups)
    missing = []
    for prev, nxt in zip(stamps, stamps[1:]):
        t = prev + HOUR
        while t < nxt:
            missing.append(t)
            t += HOUR
    if missing:
        raise GapError(missing)


def ingest_csv(path, schema: CsvSchema = DEFAULT_SCHEMA):
    """Read an hourly CSV into ``(HourlySeries | None, ExogenousFrame)``.

    The price series is ``None`` when the schema does not require prices and
    the file has no price column (exogenous forecast files).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ColumnError(f"{path}: empty file, expected a header row") from None
        rows = [r for r in reader if r]

    wanted = [schema.timestamp, *schema.exogenous]
    if schema.require_price or schema.price in header:
        wanted.insert(1, schema.price)
    missing = [c for c in wanted if c not in header]
    unknown = [c for c in header if c not in schema.header]
    if missing or unknown:
        raise ColumnError(f"{path}: missing columns {missing}, unknown columns {unknown}")
    if not rows:
        raise DataError(f"{path}: no data rows")

    pos = {name: header.index(name) for name in wanted}
    parsed = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(row[pos[c]]) for c in wanted[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        parsed.append((parse_timestamp(row[pos[schema.timestamp]]), values))
    parsed.sort(key=lambda item: item[0])
    stamps = [t for t, _ in parsed]
    _check_continuity(stamps)

    table = np.array([v for _, v in parsed], dtype=np.float64)
    if not np.all(np.isfinite(table)):
        raise DataError(f"{path}: non-finite values")
    offset = 0
    prices = None
    if schema.price in wanted:
        price_values = table[:, 0]
        bad = np.flatnonzero(price_values <= 0)
        if bad.size:
            raise NonPositivePriceError(
                f"{path}: non-positive price {price_values[bad[0]]!r} at {format_timestamp(stamps[bad[0]])}")
        prices = HourlySeries(stamps[0], price_values)
        offset = 1
    columns = {name: table[:, offset + i] for i, name in enumerate(schema.exogenous)}
    for name, col in columns.items():
        if name.endswith("_mw") and np.any(col < 0):
            raise DataError(f"{path}: negative demand in column {name}")
    return prices, ExogenousFrame(stamps[0], columns)


def write_csv(path, exo: ExogenousFrame, prices: HourlySeries | None = None,
              schema: CsvSchema = DEFAULT_SCHEMA) -> None:
    """Write the CSV contract; floats use the shortest round-trip representation."""
    if prices is not None and (prices.start != exo.start or len(prices) != len(exo)):
        raise DataError("prices and exogenous frame are not aligned")
    header = [schema.timestamp] + ([schema.price] if prices is not None else []) + list(schema.exogenous)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        cols = [exo.columns[c] for c in schema.exogenous]
        for i in range(len(exo)):
            row = [format_timestamp(exo.start + i * HOUR)]
            if prices is not None:
                row.append(repr(float(prices.values[i])))
            row.extend(repr(float(c[i])) for c in cols)
            w.writerow(row)


def log_transform(series: HourlySeries) -> HourlySeries:
    if np.any(series.values <= 0):
        raise DomainError("log transform needs strictly positive values")
    return HourlySeries(series.start, np.log(series.values))


def inverse_log(series: HourlySeries) -> HourlySeries:
    return HourlySeries(series.start, np.exp(series.values))


def calendar_features(ts: datetime) -> np.ndarray:
    """24 hour-of-day one-hots followed by 7 day-of-week one-hots (Monday = 0), UTC."""
    ts = ts.astimezone(timezone.utc)
    out = np.zeros(N_CALENDAR)
    out[ts.hour] = 1.0
    out[24 + ts.weekday()] = 1.0
    return out


def calendar_block(start: datetime, n: int) -> np.ndarray:
    return np.stack([calendar_features(start + i * HOUR) for i in range(n)])


@dataclass
class Standardizer:
    """Per-column z-score; zero-variance columns map to 0."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "Standardizer":
        return cls(rows.mean(axis=0), rows.std(axis=0))

    def transform(self, rows: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (rows - self.mean) / safe, 0.0)


def hourly_features(exo: ExogenousFrame, scaler: Standardizer) -> np.ndarray:
    """Standardized exogenous columns plus calendar one-hots for every hour, (n, 13 + 31)."""
    return np.hstack([scaler.transform(exo.matrix()), calendar_block(exo.start, len(exo))])


def _check_aligned(prices: HourlySeries, exo: ExogenousFrame):
    if prices.start != exo.start or len(prices) != len(exo):
        raise DataError(
            f"prices ({format_timestamp(prices.start)}, {len(prices)} h) and exogenous "
            f"({format_timestamp(exo.start)}, {len(exo)} h) are not aligned")


def day_starts(start: datetime, n: int) -> list[int]:
    first = (24 - start.astimezone(timezone.utc).hour) % 24
    return list(range(first, n, 24))


def example_origins(n_hours: int, start: datetime, config: NetworkConfig) -> list[int]:
    """Index of the first target hour of every example that has full history and targets."""
    return [s for s in day_starts(start, n_hours) if s >= config.n_z and s + config.n_x <= n_hours]


@dataclass
class ExampleSet:
    examples: list[TrainingExample]
    scaler: Standardizer
    n_train: int = field(default=0)

    @property
    def reference_level(self) -> float:
        """Median target log-price over the training portion."""
        return float(np.median(np.concatenate([e.y for e in self.examples[:self.n_train]])))


def build_examples(prices: HourlySeries, exo: ExogenousFrame, config: NetworkConfig,
                   validation_fraction: float = 0.07,
                   scaler: Standardizer | None = None) -> ExampleSet:
    """Window the series into one example per target day (stride 24 h).

    Without ``scaler`` the exogenous standardization is fitted on the hours
    covered by the training portion only (the chronological head).
    """
    _check_aligned(prices, exo)
    n_phys = len(exo.columns)
    if config.x_f != n_phys + N_CALENDAR:
        raise DataError(f"config.x_f={config.x_f} but data provides {n_phys} + {N_CALENDAR} features")
    origins = example_origins(len(prices), prices.start, config)
    if not origins:
        raise InsufficientHistoryError(
            f"need at least {config.n_z} history hours plus {config.n_x} target hours "
            f"starting at a day boundary, got {len(prices)} hours")
    logp = log_transform(prices).values
    n_train = split_validation(len(origins), validation_fraction) if len(origins) > 1 else 1
    raw = exo.matrix()
    if scaler is None:
        lo, hi = origins[0], origins[n_train - 1] + config.n_x
        scaler = Standardizer.fit(raw[lo:hi])
    feats = np.hstack([scaler.transform(raw), calendar_block(exo.start, len(exo))])
    examples = [
        TrainingExample(z=logp[s - config.n_z:s].copy(), x=feats[s:s + config.n_x].copy(),
                        y=logp[s:s + config.n_x].copy(), origin=prices.timestamp(s))
        for s in origins
    ]
    return ExampleSet(examples, scaler, n_train)


def forecast_input(history: HourlySeries, future_exo: ExogenousFrame, config: NetworkConfig,
                   scaler: Standardizer):
    """(Z, X) for forecasting the hours of ``future_exo`` right after ``history`` ends."""
    if len(history) < config.n_z:
        raise InsufficientHistoryError(f"need {config.n_z} history hours, got {len(history)}")
    if len(future_exo) != config.n_x:
        raise DataError(f"exogenous forecast must cover {config.n_x} hours, got {len(future_exo)}")
    expected = history.start + len(history) * HOUR
    if future_exo.start != expected:
        raise DataError(f"exogenous forecast starts at {format_timestamp(future_exo.start)}, "
                        f"expected {format_timestamp(expected)}")
    z = log_transform(history).values[-config.n_z:]
    x = hourly_features(future_exo, scaler)
    return z, x
