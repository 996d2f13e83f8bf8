"""Versioned plain-text model files.

Layout::

    dalmp-model
    format_version 1
    kind forecaster
    meta <key> <value>          (zero or more)
    tensor <name> <rank> <dims...>
    <row-major values, shortest round-trip decimal, space separated>
    ...
    checksum sha256 <hex digest of every preceding line>
"""
from __future__ import annotations

import hashlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import LinearAutoregressor
from .forecaster import ForecasterWeights, NetworkConfig

MAGIC = "dalmp-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class ChecksumMismatchError(ModelFileError):
    pass


def _digest(lines: list[str]) -> str:
    return hashlib.sha256("".join(line + "\n" for line in lines).encode("utf-8")).hexdigest()


def write_records(path, kind: str, meta: dict[str, object], tensors: dict[str, np.ndarray]) -> None:
    lines = [MAGIC, f"format_version {FORMAT_VERSION}", f"kind {kind}"]
    for key, value in meta.items():
        text = str(value)
        if not key or any(c.isspace() for c in key) or "\n" in text:
            raise ModelFileError(f"cannot store metadata {key!r}={text!r}")
        lines.append(f"meta {key} {text}")
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        dims = arr.shape if arr.ndim else (1,)
        lines.append(f"tensor {name} {len(dims)} " + " ".join(str(d) for d in dims))
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    lines.append(f"checksum sha256 {_digest(lines)}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_records(path) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 4 or lines[0] != MAGIC:
        raise ModelFileError(f"{path}: not a model file")
    head = lines[1].split()
    if len(head) != 2 or head[0] != "format_version" or not head[1].isdigit():
        raise ModelFileError(f"{path}: missing format_version line")
    if int(head[1]) != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {head[1]}, this reader supports {FORMAT_VERSION}")
    tail = lines[-1].split()
    if len(tail) != 3 or tail[:2] != ["checksum", "sha256"]:
        raise ModelFileError(f"{path}: missing checksum line")
    if _digest(lines[:-1]) != tail[2]:
        raise ChecksumMismatchError(f"{path}: checksum mismatch, file is corrupted")

    kind = lines[2].split(" ", 1)[1]
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 3
    body = lines[:-1]
    while i < len(body):
        parts = body[i].split(" ")
        if parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
            i += 1
        elif parts[0] == "tensor":
            name, rank = parts[1], int(parts[2])
            shape = tuple(int(d) for d in parts[3:3 + rank])
            values = np.array([float(v) for v in body[i + 1].split()], dtype=np.float64)
            if values.size != int(np.prod(shape)):
                raise ModelFileError(f"{path}: tensor {name} has {values.size} values for shape {shape}")
            tensors[name] = values.reshape(shape)
            i += 2
        else:
            raise ModelFileError(f"{path}: unexpected line {i + 1}: {body[i][:40]!r}")
    return kind, meta, tensors


def _config_meta(cfg: NetworkConfig) -> dict[str, object]:
    return {f"config.{f.name}": getattr(cfg, f.name) for f in fields(cfg)}


def _config_from_meta(meta: dict[str, str]) -> NetworkConfig:
    kwargs = {}
    for f in fields(NetworkConfig):
        key = f"config.{f.name}"
        if key not in meta:
            raise ModelFileError(f"missing network setting {key}")
        default = f.default
        kwargs[f.name] = type(default)(meta[key])
    return NetworkConfig(**kwargs)


def save_model(weights: ForecasterWeights, path) -> None:
    weights.audit()
    meta = {"seed": weights.seed, "level": repr(float(weights.level)), **_config_meta(weights.config)}
    tensors = dict(weights.params)
    tensors.update({f"extra:{k}": v for k, v in weights.extras.items()})
    write_records(path, "forecaster", meta, tensors)


def load_model(path) -> ForecasterWeights:
    kind, meta, tensors = read_records(path)
    if kind != "forecaster":
        raise ModelFileError(f"{path}: holds a {kind!r} model, expected 'forecaster'")
    cfg = _config_from_meta(meta).validate()
    params = {k: v for k, v in tensors.items() if not k.startswith("extra:")}
    extras = {k[len("extra:"):]: v for k, v in tensors.items() if k.startswith("extra:")}
    weights = ForecasterWeights(cfg, int(meta["seed"]), params, extras, float(meta.get("level", "0.0")))
    weights.audit()
    return weights


def save_linear(model: LinearAutoregressor, path) -> None:
    meta = {"seasonal_mode": model.seasonal_mode, "period": model.period,
            "fitted_on_log": int(model.fitted_on_log), "n_obs": model.n_obs,
            "resid_var": repr(float(model.resid_var))}
    tensors = {"intercept": np.array([model.intercept]), "phi": model.phi,
               "seasonal_phi": model.seasonal_phi, "beta": model.beta,
               "exo_mean": model.exo_mean, "exo_scale": model.exo_scale}
    write_records(path, "linear_autoregressor", meta, {k: v for k, v in tensors.items() if v.size})


def load_linear(path) -> LinearAutoregressor:
    kind, meta, t = read_records(path)
    if kind != "linear_autoregressor":
        raise ModelFileError(f"{path}: holds a {kind!r} model, expected 'linear_autoregressor'")
    empty = np.zeros(0)
    return LinearAutoregressor(
        float(t["intercept"][0]), t.get("phi", empty), meta["seasonal_mode"], t.get("seasonal_phi", empty),
        int(meta["period"]), t.get("beta", empty), t.get("exo_mean", empty), t.get("exo_scale", empty),
        bool(int(meta["fitted_on_log"])), int(meta["n_obs"]), float(meta["resid_var"]))
