"""Two-branch day-ahead price forecaster.

Recurrent block: LSTM over the past ``n_z`` log-prices, then two dense layers
that emit one value per forecast hour. CNN block: a 1D convolution over the
``n_x`` hours of exogenous features. The two outputs are stacked along the
channel axis and mixed by a width-1 convolution, so hour ``h`` of the forecast
only sees the exogenous features of hour ``h`` (for exogenous kernel width 1)
or its immediate neighbours (for wider kernels).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


class InvalidConfigError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    n_z: int = 240
    n_x: int = 24
    x_f: int = 44
    c_f: int = 3           # CNN output channels
    kernel_width: int = 3  # CNN kernel width
    lstm_units: int = 100
    dense1_units: int = 50
    dense2_units: int = 24
    batch_size: int = 50
    output_activation: str = "relu"

    def validate(self) -> "NetworkConfig":
        problems = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and v < 1:
                problems.append(f"{f.name} must be a positive integer (got {v})")
        if self.dense2_units != self.n_x:
            problems.append(f"dense2_units ({self.dense2_units}) must equal n_x ({self.n_x})")
        if self.kernel_width > self.n_x:
            problems.append(f"kernel_width ({self.kernel_width}) exceeds n_x ({self.n_x})")
        if self.output_activation not in ("relu", "linear"):
            problems.append(f"output_activation must be 'relu' or 'linear' (got {self.output_activation!r})")
        if problems:
            raise InvalidConfigError("; ".join(problems))
        return self


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 250
    min_delta: float = 1e-4
    patience: int = 20
    validation_fraction: float = 0.07
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rng_seed: int = 0

    def validate(self) -> "TrainConfig":
        problems = []
        if not 0.0 < self.validation_fraction < 0.5:
            problems.append("validation_fraction must lie in (0, 0.5)")
        if self.patience < 1:
            problems.append("patience must be >= 1")
        if self.min_delta < 0:
            problems.append("min_delta must be >= 0")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if problems:
            raise InvalidConfigError("; ".join(problems))
        return self


def parameter_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    h = cfg.lstm_units
    return {
        "lstm.w_x": (1, 4 * h),
        "lstm.w_h": (h, 4 * h),
        "lstm.b": (4 * h,),
        "dense1.w": (h, cfg.dense1_units),
        "dense1.b": (cfg.dense1_units,),
        "dense2.w": (cfg.dense1_units, cfg.dense2_units),
        "dense2.b": (cfg.dense2_units,),
        "exo_conv.w": (cfg.kernel_width, cfg.x_f, cfg.c_f),
        "exo_conv.b": (cfg.c_f,),
        "out_conv.w": (1, 1 + cfg.c_f, 1),
        "out_conv.b": (1,),
    }


def _fans(name: str, shape) -> tuple[int, int]:
    if name.endswith("conv.w"):
        width, c_in, c_out = shape
        return width * c_in, width * c_out
    return shape[0], shape[1]


@dataclass
class ForecasterWeights:
    config: NetworkConfig
    seed: int
    params: dict[str, np.ndarray]
    # auxiliary arrays persisted alongside the weights (e.g. exogenous scaling)
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    # reference log-price subtracted from Z before the LSTM, so the recurrent
    # input is centred; it also seeds the output bias
    level: float = 0.0

    def audit(self) -> None:
        expected = parameter_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ad.ShapeMismatchError("audit", missing, extra)
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ad.ShapeMismatchError(f"audit {name}", shape, self.params[name].shape)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ForecasterWeights":
        return ForecasterWeights(self.config, self.seed,
                                 {k: v.copy() for k, v in self.params.items()},
                                 {k: v.copy() for k, v in self.extras.items()}, self.level)


DENSE1_BIAS = 0.1
DENSE2_BIAS = 1.0


def build_forecaster(config: NetworkConfig, seed: int = 0, level: float = 0.0) -> ForecasterWeights:
    """Glorot-uniform weights, forget-gate bias 1, positive dense biases.

    The dense biases start at ``DENSE1_BIAS`` and ``DENSE2_BIAS`` so that
    every ReLU unit is active on every example; the recurrent features barely
    differ between examples at initialization, so a unit that starts dead is
    dead for the whole data set and its forecast hour loses the recurrent
    path. ``level`` is a typical log-price (see ``ForecasterWeights.level``);
    the output bias cancels the recurrent contribution of the dense2 bias so
    the recurrent path starts out centred on it.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    h = config.lstm_units
    params["lstm.b"][h:2 * h] = 1.0
    params["dense1.b"][...] = DENSE1_BIAS
    params["dense2.b"][...] = DENSE2_BIAS
    params["out_conv.b"][...] = level - params["out_conv.w"][0, 0, 0] * DENSE2_BIAS
    weights = ForecasterWeights(config, seed, params, level=float(level))
    weights.audit()
    return weights


def _as_batch(z, x, cfg: NetworkConfig):
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :, None]
    elif z.ndim == 2:
        z = z[..., None]
    if x.ndim == 2:
        x = x[None]
    if z.shape[1:] != (cfg.n_z, 1) or x.shape[1:] != (cfg.n_x, cfg.x_f) or z.shape[0] != x.shape[0]:
        raise ad.ShapeMismatchError("forecaster input", z.shape, x.shape)
    return z, x


def recurrent_block(p: dict[str, ad.Node], z: ad.Node, cfg: NetworkConfig) -> ad.Node:
    h = ad.lstm(z, p["lstm.w_x"], p["lstm.w_h"], p["lstm.b"])
    d1 = ad.relu(ad.dense(h, p["dense1.w"], p["dense1.b"]))
    d2 = ad.relu(ad.dense(d1, p["dense2.w"], p["dense2.b"]))
    return ad.reshape(d2, (z.shape[0], cfg.n_x, 1))


def cnn_block(p: dict[str, ad.Node], x: ad.Node) -> ad.Node:
    return ad.relu(ad.conv1d(x, p["exo_conv.w"], p["exo_conv.b"]))


def forward_graph(p: dict[str, ad.Node], z: ad.Node, x: ad.Node, cfg: NetworkConfig) -> ad.Node:
    """Build the log-price forecast node, shape (batch, n_x, 1)."""
    stacked = ad.concat(recurrent_block(p, z, cfg), cnn_block(p, x))
    out = ad.conv1d(stacked, p["out_conv.w"], p["out_conv.b"])
    return ad.relu(out) if cfg.output_activation == "relu" else out


def _leaves(weights: ForecasterWeights) -> dict[str, ad.Node]:
    return {k: ad.leaf(v, name=k) for k, v in weights.params.items()}


def forward(weights: ForecasterWeights, z, x) -> np.ndarray:
    """Log-price forecast for a batch, shape (batch, n_x, 1)."""
    z, x = _as_batch(z, x, weights.config)
    return forward_graph(_leaves(weights), ad.leaf(z - weights.level), ad.leaf(x), weights.config).value


def predict(weights: ForecasterWeights, z, x) -> np.ndarray:
    """Prices in $/MWh for a single example: exp of the network output."""
    z, x = _as_batch(z, x, weights.config)
    if z.shape[0] != 1:
        raise ad.ShapeMismatchError("predict (batch must be 1)", z.shape, x.shape)
    return np.exp(forward(weights, z, x)[0, :, 0])


def loss_graph(p, z, x, y, cfg) -> ad.Node:
    return ad.mae(forward_graph(p, ad.leaf(z), ad.leaf(x), cfg), ad.leaf(y))


# --- training ---------------------------------------------------------------


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


class EarlyStopping:
    """Stop after ``patience`` epochs without an improvement larger than ``min_delta``."""

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> tuple[bool, bool]:
        """Return (improved, should_stop)."""
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.wait = 0
            return True, False
        self.wait += 1
        return False, self.wait >= self.patience


@dataclass
class TrainingExample:
    z: np.ndarray        # (n_z,) log-prices, chronological
    x: np.ndarray        # (n_x, x_f) exogenous block of the target day
    y: np.ndarray        # (n_x,) target log-prices
    origin: object = None  # forecast issue timestamp


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float


@dataclass
class TrainResult:
    weights: ForecasterWeights
    history: list[EpochRecord]
    best_epoch: int
    best_val_mae: float
    stopped_epoch: int


def stack_examples(examples: Sequence[TrainingExample]):
    z = np.stack([e.z for e in examples])[..., None]
    x = np.stack([e.x for e in examples])
    y = np.stack([e.y for e in examples])[..., None]
    return z, x, y


def split_validation(n: int, fraction: float) -> int:
    """Number of training examples; the chronological tail is validation."""
    n_val = max(1, int(round(n * fraction)))
    return max(1, n - n_val)


def evaluate_mae(weights: ForecasterWeights, z, x, y, chunk: int = 256) -> float:
    total = 0.0
    for s in range(0, len(z), chunk):
        pred = forward(weights, z[s:s + chunk], x[s:s + chunk])
        total += np.abs(pred - y[s:s + chunk]).sum()
    return total / y.size


def train(weights: ForecasterWeights, examples: Sequence[TrainingExample], tc: TrainConfig,
          lr_schedule: Callable[[int], float] | None = None,
          on_epoch: Callable[[EpochRecord, ForecasterWeights], bool] | None = None) -> TrainResult:
    """Mini-batch Adam on the MAE of log-prices with early stopping on a chronological tail.

    ``lr_schedule(epoch)`` overrides the learning rate per (1-based) epoch.
    ``on_epoch(record, weights)`` runs after every epoch with the current (not
    the best) weights; returning True ends training.
    Returns the weights of the best validation epoch.
    """
    tc.validate()
    if len(examples) < 2:
        raise EmptyDatasetError(f"need at least 2 examples, got {len(examples)}")
    cfg = weights.config
    z, x, y = stack_examples(examples)
    _as_batch(z[:1], x[:1], cfg)
    zc = z - weights.level
    n_train = split_validation(len(examples), tc.validation_fraction)
    zt, xt, yt = zc[:n_train], x[:n_train], y[:n_train]
    zv, xv, yv = z[n_train:], x[n_train:], y[n_train:]

    current = weights.copy()
    best = current.copy()
    opt = Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon)
    stopper = EarlyStopping(tc.patience, tc.min_delta)
    rng = np.random.default_rng(tc.rng_seed)
    history: list[EpochRecord] = []
    m = cfg.batch_size
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        lr = tc.learning_rate if lr_schedule is None else lr_schedule(epoch)
        order = rng.permutation(n_train)
        running = 0.0
        for s in range(0, n_train, m):
            idx = order[s:s + m]
            p = _leaves(current)
            loss = loss_graph(p, zt[idx], xt[idx], yt[idx], cfg)
            value = loss.value[0]
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            ad.backward(loss)
            opt.step(current.params, {k: n.grad for k, n in p.items()}, lr=lr)
            running += value * len(idx)
        val = evaluate_mae(current, zv, xv, yv)
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, float(running / n_train), float(val)))
        improved, stop = stopper.update(epoch, val)
        if improved:
            best = current.copy()
        if stop or (on_epoch is not None and on_epoch(history[-1], current)):
            break
    return TrainResult(best, history, stopper.best_epoch, stopper.best, epoch)


