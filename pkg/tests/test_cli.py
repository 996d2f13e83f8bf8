import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dalmp import cli
from dalmp.data import ingest_csv
from dalmp.metrics import mape, mse, read_reports

SMALL = ["--set", "network.n_z=48", "--set", "network.lstm_units=4", "--set", "network.dense1_units=8",
         "--set", "network.c_f=2", "--set", "network.batch_size=16", "--set", "training.max_epochs=3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out", out, "--seed", 5, "--set", "synth.n_days=40") == 0
    return out


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_synth_outputs(synth_dir, tmp_path):
    assert {"market.csv", "market_truth.csv", "history.csv", "exo_forecast.csv", "manifest.json"} <= set(
        files(synth_dir))
    prices, _ = ingest_csv(synth_dir / "market.csv")
    assert len(prices) == 40 * 24
    assert run("synth", "--out", tmp_path, "--seed", 5, "--set", "synth.n_days=40") == 0
    assert files(tmp_path) == files(synth_dir)


def test_manifest_echoes_config(synth_dir):
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["config"]["seed"] == 5 and manifest["config"]["market"]["seed"] == 5
    assert manifest["config"]["synth"]["n_days"] == 40


@pytest.mark.parametrize("argv", [
    ["synth", "--set", "market.log_noise_sigma=-1"],
    ["synth", "--set", "market.no_such_key=1"],
    ["synth", "--set", "nosection.key=1"],
    ["synth", "--set", "synth.n_days=ten"],
    ["train"],
    ["synth", "--set", "network.dense2_units=23"],
])
def test_config_errors_exit_2(argv, tmp_path):
    assert run(*argv, "--out", tmp_path) == cli.EXIT_CONFIG


def test_config_file_and_unknown_section(tmp_path):
    good = tmp_path / "good.ini"
    good.write_text("[DEFAULT]\nseed = 9\n\n[synth]\nn_days = 30\n")
    cfg = cli.load_run_config(str(good), ["risk.hours=8-20,22"])
    assert cfg.seed == 9 and cfg.training.rng_seed == 9 and cfg.synth.n_days == 30
    assert cli.parse_hours(cfg.risk.hours) == list(range(8, 21)) + [22]
    bad = tmp_path / "bad.ini"
    bad.write_text("[gpu]\ncount = 2\n")
    assert run("synth", "--config", bad, "--out", tmp_path / "o") == cli.EXIT_CONFIG


def test_missing_input_file_exits_1(tmp_path):
    assert run("train", "--data", tmp_path / "nope.csv", "--out", tmp_path) == cli.EXIT_RUNTIME


def test_train_forecast_risk_pipeline(synth_dir, tmp_path):
    before = {n: b for n, b in files(synth_dir).items()}
    t1, t2 = tmp_path / "t1", tmp_path / "t2"
    for out in (t1, t2):
        assert run("train", "--data", synth_dir / "history.csv", "--out", out, "--seed", 2, *SMALL) == 0
    assert (t1 / "weights.txt").read_bytes() == (t2 / "weights.txt").read_bytes()
    with open(t1 / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert 1 <= len(rows) <= 3 and list(rows[0]) == ["epoch", "train_mae", "val_mae"]

    fc = tmp_path / "fc"
    assert run("forecast", "--weights", t1 / "weights.txt", "--data", synth_dir / "history.csv",
               "--exo", synth_dir / "exo_forecast.csv", "--out", fc, *SMALL) == 0
    stamps, prices = cli.read_forecast(fc / "forecast.csv")
    assert len(prices) == 24 and np.all(prices > 0)
    assert stamps[0] == "2019-09-17T00:00:00Z"

    rk = tmp_path / "rk"
    assert run("risk", "--forecast", fc / "forecast.csv", "--residuals", t1 / "residuals.csv",
               "--set", "risk.n_samples=20000", "--out", rk) == 0
    summary = (rk / "risk_summary.txt").read_text()
    assert "recommendation: " in summary and "P(block profit < 0)" in summary
    assert len((rk / "risk_hours.csv").read_text().splitlines()) == 25
    assert files(synth_dir) == before  # inputs untouched


def test_forecast_rejects_mismatched_weights(synth_dir, tmp_path):
    assert run("train", "--data", synth_dir / "history.csv", "--out", tmp_path / "t", *SMALL) == 0
    assert run("forecast", "--weights", synth_dir / "market.csv", "--data", synth_dir / "history.csv",
               "--exo", synth_dir / "exo_forecast.csv", "--out", tmp_path / "f") == cli.EXIT_RUNTIME


def test_risk_with_bad_threshold(tmp_path):
    fc = tmp_path / "forecast.csv"
    cli.write_forecast(fc, ["t"] * 24, np.full(24, 30.0))
    code = run("risk", "--forecast", fc, "--set", "risk.sigma=0.1", "--set", "risk.confidence_threshold=1.5",
               "--out", tmp_path / "r")
    assert code == cli.EXIT_CONFIG


def test_evaluate_week(tmp_path):
    syn = tmp_path / "syn"
    assert run("synth", "--out", syn, "--set", "synth.n_days=45", "--seed", 1) == 0
    ev = tmp_path / "ev"
    assert run("evaluate", "--data", syn / "market.csv", "--out", ev, *SMALL) == 0
    reports = read_reports(ev / "eval.csv")
    assert [r.model for r in reports] == ["model1", "model2", "model3", "dl"]
    assert all(r.n == 168 for r in reports)
    with open(ev / "forecasts.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 168
    actual = np.array([float(r["actual"]) for r in rows])
    for r in reports:
        fc = np.array([float(row[r.model]) for row in rows])
        assert r.mape == mape(actual, fc) and r.mse == mse(actual, fc)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dalmp", "synth", "--out", str(tmp_path), "--set", "x=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "config error" in proc.stderr
