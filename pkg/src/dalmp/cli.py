"""Command-line front end: ``dalmp {synth,train,forecast,evaluate,risk}``.

Settings come from an INI file (``--config``) with ``--set section.key=value``
overrides. Every command first writes ``manifest.json`` (resolved settings and
input checksums) into ``--out``. Exit codes: 0 success, 1 data/runtime error,
2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import benchmark, persistence, risk, synthetic
from .data import (EXOGENOUS_SCHEMA, HOUR, DataError, Standardizer, build_examples,
                   format_timestamp, forecast_input, ingest_csv, parse_timestamp, write_csv)
from .forecaster import (InvalidConfigError, NetworkConfig, TrainConfig, build_forecaster, forward,
                         predict, stack_examples, train)
from .metrics import write_reports

log = logging.getLogger("dalmp")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RiskSettings:
    capacity_mw: float = 300.0
    heat_rate: float = 7.5
    gas_price: float = 2.0
    startup_cost: float = 20000.0
    sigma: float = -1.0  # negative: estimate from the residuals file
    confidence_threshold: float = 0.90
    hours: str = "1-24"
    n_samples: int = 100_000
    n_shards: int = 1


@dataclass
class PathSettings:
    data: str = ""
    weights: str = ""
    exo_forecast: str = ""
    forecast: str = ""
    residuals: str = ""


@dataclass
class SynthSettings:
    n_days: int = 372
    start: str = "2019-08-09T00:00:00Z"


@dataclass
class EvaluateSettings:
    test_days: int = 7
    seasonal_mode: str = "multiplicative"


@dataclass
class RunConfig:
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    risk: RiskSettings = field(default_factory=RiskSettings)
    paths: PathSettings = field(default_factory=PathSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)
    market: synthetic.MarketParams = field(default_factory=synthetic.MarketParams)
    evaluate: EvaluateSettings = field(default_factory=EvaluateSettings)

    def as_dict(self) -> dict:
        return {f.name: (asdict(getattr(self, f.name)) if f.name != "seed" else self.seed)
                for f in fields(self)}


SECTIONS = ("network", "training", "risk", "paths", "synth", "market", "evaluate")


def _coerce(section: str, key: str, text: str, default):
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r}") from None


def _apply(section: str, obj, items: dict[str, str]):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"unknown setting [{section}] {key}")
        changes[key] = _coerce(section, key, text, getattr(obj, key))
    return replace(obj, **changes) if changes else obj


def load_run_config(path: str | None, overrides=(), seed: int | None = None) -> RunConfig:
    items: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    top: dict[str, str] = {}
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        top.update(parser.defaults())
        for section in parser.sections():
            if section not in items:
                raise ConfigError(f"unknown config section [{section}]")
            items[section].update({k: v for k, v in parser.items(section) if k not in parser.defaults()})
    for text in overrides:
        key, sep, value = text.partition("=")
        if not sep:
            raise ConfigError(f"override {text!r} must look like section.key=value")
        section, dot, name = key.strip().partition(".")
        if not dot:
            if section != "seed":
                raise ConfigError(f"override {text!r} must look like section.key=value")
            top["seed"] = value
            continue
        if section not in items:
            raise ConfigError(f"unknown config section [{section}]")
        items[section][name] = value
    unknown_top = set(top) - {"seed"}
    if unknown_top:
        raise ConfigError(f"unknown top-level settings {sorted(unknown_top)}")

    cfg = RunConfig()
    if "seed" in top:
        cfg.seed = _coerce("DEFAULT", "seed", top["seed"], 0)
    if seed is not None:
        cfg.seed = seed
    for section in SECTIONS:
        setattr(cfg, section, _apply(section, getattr(cfg, section), items[section]))
    if "rng_seed" not in items["training"]:
        cfg.training = replace(cfg.training, rng_seed=cfg.seed)
    if "seed" not in items["market"]:
        cfg.market = replace(cfg.market, seed=cfg.seed)
    try:
        cfg.network.validate()
        cfg.training.validate()
        cfg.market.validate()
    except (InvalidConfigError, synthetic.InvalidParamsError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.evaluate.seasonal_mode not in ("additive", "multiplicative"):
        raise ConfigError("[evaluate] seasonal_mode must be 'additive' or 'multiplicative'")
    return cfg


def parse_hours(text: str) -> list[int]:
    hours: list[int] = []
    for part in text.replace(" ", "").split(","):
        lo, dash, hi = part.partition("-")
        try:
            hours.extend(range(int(lo), int(hi) + 1) if dash else [int(lo)])
        except ValueError:
            raise ConfigError(f"[risk] hours: cannot parse {text!r}") from None
    return hours


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": cfg.as_dict(),
        "inputs": {role: {"path": p, "sha256": sha256_file(p)} for role, p in inputs.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} given (set [paths] or the matching flag)")
    if not Path(path).is_file():
        raise DataError(f"{what} {path} does not exist")
    return path


# --- commands ----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: Path) -> None:
    start = parse_timestamp(cfg.synth.start)
    if cfg.synth.n_days < 30:
        raise ConfigError("[synth] n_days must be >= 30")
    write_manifest(out, "synth", cfg, {})
    prices, exo, truth = synthetic.generate_market(cfg.market, cfg.synth.n_days, start)
    data_path, truth_path = synthetic.write_market(out, prices, exo, truth)
    # the last day split off as a ready-made forecasting exercise
    n = len(prices) - 24
    write_csv(out / "history.csv", exo.window(0, n), prices.window(0, n))
    write_csv(out / "exo_forecast.csv", exo.window(n, len(prices)))
    log.info("wrote %s, %s, history.csv and exo_forecast.csv", data_path, truth_path)


def cmd_train(cfg: RunConfig, out: Path) -> None:
    data = _require(cfg.paths.data, "training data")
    write_manifest(out, "train", cfg, {"data": data})
    prices, exo = ingest_csv(data)
    ds = build_examples(prices, exo, cfg.network, cfg.training.validation_fraction)
    result = train(build_forecaster(cfg.network, cfg.seed, ds.reference_level), ds.examples, cfg.training)
    weights = result.weights
    weights.extras["scaler.mean"] = ds.scaler.mean
    weights.extras["scaler.std"] = ds.scaler.std
    persistence.save_model(weights, out / "weights.txt")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mae", "val_mae"])
        for rec in result.history:
            w.writerow([rec.epoch, repr(rec.train_mae), repr(rec.val_mae)])
    z, x, y = stack_examples(ds.examples[ds.n_train:])
    write_residuals(out / "residuals.csv", (y - forward(weights, z, x)).ravel())
    log.info("trained %d epochs, best epoch %d (val MAE %.5f)", len(result.history),
             result.best_epoch, result.best_val_mae)


def write_residuals(path, residuals) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["residual"])
        w.writerows([repr(float(r))] for r in residuals)


def read_residuals(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        return np.array([float(row["residual"]) for row in csv.DictReader(fh)])


def _scaler_from(weights) -> Standardizer:
    try:
        return Standardizer(weights.extras["scaler.mean"], weights.extras["scaler.std"])
    except KeyError:
        raise persistence.ModelFileError("weights file carries no exogenous scaling") from None


def cmd_forecast(cfg: RunConfig, out: Path) -> None:
    weights_path = _require(cfg.paths.weights, "weights file")
    data = _require(cfg.paths.data, "price history")
    exo_path = _require(cfg.paths.exo_forecast, "exogenous forecast")
    write_manifest(out, "forecast", cfg, {"weights": weights_path, "data": data, "exo_forecast": exo_path})
    weights = persistence.load_model(weights_path)
    history, _ = ingest_csv(data)
    _, future = ingest_csv(exo_path, EXOGENOUS_SCHEMA)
    z, x = forecast_input(history, future, weights.config, _scaler_from(weights))
    prices = predict(weights, z, x)
    write_forecast(out / "forecast.csv", [format_timestamp(future.start + i * HOUR) for i in range(len(prices))],
                   prices)


def write_forecast(path, stamps, prices) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "price"])
        for t, p in zip(stamps, prices):
            w.writerow([t, repr(float(p))])


def read_forecast(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [r["timestamp"] for r in rows], np.array([float(r["price"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad forecast file ({exc})") from None


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    data = _require(cfg.paths.data, "evaluation data")
    write_manifest(out, "evaluate", cfg, {"data": data})
    prices, exo = ingest_csv(data)
    bcfg = benchmark.BenchmarkConfig(test_days=cfg.evaluate.test_days, network=cfg.network,
                                     training=cfg.training, seasonal_mode=cfg.evaluate.seasonal_mode,
                                     seed=cfg.seed)
    result = benchmark.run_benchmark(prices, exo, bcfg)
    write_reports(out / "eval.csv", result.reports)
    with open(out / "forecasts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "actual", *benchmark.MODEL_NAMES])
        for i, t in enumerate(result.timestamps):
            w.writerow([format_timestamp(t), repr(float(result.actual[i])),
                        *(repr(float(result.forecasts[m][i])) for m in benchmark.MODEL_NAMES)])
    persistence.save_model(result.dl.weights, out / "weights.txt")
    write_residuals(out / "residuals.csv", result.validation_residuals)


def cmd_risk(cfg: RunConfig, out: Path) -> None:
    forecast_path = _require(cfg.paths.forecast, "forecast file")
    inputs = {"forecast": forecast_path}
    if cfg.risk.sigma < 0:
        inputs["residuals"] = _require(cfg.paths.residuals, "residuals file")
    write_manifest(out, "risk", cfg, inputs)
    stamps, prices = read_forecast(forecast_path)
    if len(prices) == 0 or np.any(prices <= 0):
        raise DataError(f"{forecast_path}: forecast prices must be strictly positive")
    sigma = cfg.risk.sigma if cfg.risk.sigma >= 0 else risk.estimate_sigma(read_residuals(inputs["residuals"]))
    try:
        spec = risk.RiskSpec(cfg.risk.capacity_mw, cfg.risk.heat_rate, cfg.risk.gas_price,
                             cfg.risk.startup_cost, sigma, cfg.risk.confidence_threshold).validate()
    except risk.InvalidSpecError as exc:
        raise ConfigError(str(exc)) from None
    report = risk.assess(np.log(prices), spec, parse_hours(cfg.risk.hours), cfg.risk.n_samples,
                         cfg.seed, cfg.risk.n_shards, stamps)
    report.write_csv(out / "risk_hours.csv")
    summary = f"sigma: {sigma:.4f}\nbreakeven: ${spec.breakeven:.2f}/MWh\n" + report.summary()
    (out / "risk_summary.txt").write_text(summary, encoding="utf-8")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "forecast": cmd_forecast,
            "evaluate": cmd_evaluate, "risk": cmd_risk}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dalmp", description="Day-ahead LMP forecasting toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--seed", type=int, help="global seed (default from config, else 0)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration setting (repeatable)")
    parser.add_argument("--data", help="shorthand for --set paths.data=...")
    parser.add_argument("--weights", help="shorthand for --set paths.weights=...")
    parser.add_argument("--exo", help="shorthand for --set paths.exo_forecast=...")
    parser.add_argument("--forecast", help="shorthand for --set paths.forecast=...")
    parser.add_argument("--residuals", help="shorthand for --set paths.residuals=...")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    for flag, key in (("data", "data"), ("weights", "weights"), ("exo", "exo_forecast"),
                      ("forecast", "forecast"), ("residuals", "residuals")):
        if getattr(args, flag):
            overrides.append(f"paths.{key}={getattr(args, flag)}")
    try:
        cfg = load_run_config(args.config, overrides, args.seed)
        COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
