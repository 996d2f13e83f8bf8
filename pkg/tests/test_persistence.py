import numpy as np
import pytest

from dalmp import baselines as B
from dalmp import persistence as P
from dalmp.autodiff import ShapeMismatchError
from dalmp.forecaster import build_forecaster, predict

from conftest import random_inputs, tiny_config


@pytest.fixture
def weights():
    w = build_forecaster(tiny_config(), seed=7, level=3.1)
    w.extras["scaler.mean"] = np.array([1.5, -2.0])
    return w


def test_roundtrip_forecast_bit_identical(tmp_path, weights, rng):
    path = tmp_path / "w.txt"
    P.save_model(weights, path)
    back = P.load_model(path)
    z, x, _ = random_inputs(weights.config, 1, rng)
    assert np.array_equal(predict(back, z, x), predict(weights, z, x))
    assert back.config == weights.config and back.level == weights.level and back.seed == 7
    assert all(np.array_equal(back.params[k], v) for k, v in weights.params.items())
    assert np.array_equal(back.extras["scaler.mean"], weights.extras["scaler.mean"])


def test_save_is_byte_stable(tmp_path, weights):
    P.save_model(weights, tmp_path / "a.txt")
    P.save_model(P.load_model(tmp_path / "a.txt"), tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_corrupted_value_fails_checksum(tmp_path, weights):
    path = tmp_path / "w.txt"
    P.save_model(weights, path)
    lines = path.read_text().splitlines()
    i = next(k for k, line in enumerate(lines) if line.startswith("tensor dense1.w")) + 1
    values = lines[i].split()
    values[0] = repr(float(values[0]) + 1e-9)
    lines[i] = " ".join(values)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(P.ChecksumMismatchError):
        P.load_model(path)


def test_future_version_rejected(tmp_path, weights):
    path = tmp_path / "w.txt"
    P.save_model(weights, path)
    path.write_text(path.read_text().replace("format_version 1", "format_version 2", 1))
    with pytest.raises(P.VersionMismatchError):
        P.load_model(path)


def test_shape_audit_on_load(tmp_path, weights):
    tensors = dict(weights.params)
    tensors["dense1.w"] = np.zeros((2, 2))
    meta = {"seed": 0, **P._config_meta(weights.config)}
    P.write_records(tmp_path / "bad.txt", "forecaster", meta, tensors)
    with pytest.raises(ShapeMismatchError):
        P.load_model(tmp_path / "bad.txt")


def test_not_a_model_file(tmp_path):
    (tmp_path / "x.txt").write_text("hello\nworld\n")
    with pytest.raises(P.ModelFileError):
        P.load_model(tmp_path / "x.txt")


def test_linear_model_roundtrip(tmp_path):
    model = B.LinearAutoregressor(0.3, [0.5, 0.1], "multiplicative", [0.2, 0.05], 24,
                                  [0.7, -0.1], [10.0, 5.0], [2.0, 1.0], n_obs=500, resid_var=0.01)
    P.save_linear(model, tmp_path / "m2.txt")
    back = P.load_linear(tmp_path / "m2.txt")
    hist = np.linspace(2.5, 3.5, 60)
    fut, past = np.ones((24, 2)), np.ones((60, 2))
    assert np.array_equal(B.forecast_recursive(back, hist, fut, past), B.forecast_recursive(model, hist, fut, past))
    with pytest.raises(P.ModelFileError):
        P.load_model(tmp_path / "m2.txt")
    ar = B.LinearAutoregressor(1.0, np.zeros(6))
    P.save_linear(ar, tmp_path / "m1.txt")
    assert P.load_linear(tmp_path / "m1.txt").beta.size == 0
