"""Benchmark forecasters.

* Model 1: AR(6) on log-prices, ordinary least squares.
* Model 2: seasonal AR (6,0,0)x(2,0,0,24) with exogenous regressors. In the
  default multiplicative mode this is a regression with seasonal-AR errors,

      phi(B) Phi(B^24) (y_t - mu - x_t beta) = e_t,

  fitted by conditional least squares with Levenberg-Marquardt, warm-started
  from the additive (plain ARX) OLS fit.
* Model 3: a stateless MLP mapping one hour of exogenous features to the
  log-price of that hour.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .forecaster import (Adam, EarlyStopping, InvalidConfigError, TrainConfig,
                         TrainingDivergedError, split_validation)

SEASONAL_MODES = ("none", "additive", "multiplicative")
MAX_CONDITION = 1e12


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class InsufficientDataError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    pass


class MissingExogenousError(ValueError):
    pass


class NearSingularWarning(UserWarning):
    pass


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values", series), dtype=np.float64)


def _exo_matrix(exo) -> np.ndarray | None:
    if exo is None:
        return None
    if hasattr(exo, "matrix"):
        return exo.matrix()
    m = np.asarray(exo, dtype=np.float64)
    return m[:, None] if m.ndim == 1 else m


@dataclass
class LinearAutoregressor:
    """Linear (seasonal) autoregression on log-prices.

    For modes ``none`` and ``additive`` the model is the ARX recursion
    ``y_t = intercept + sum phi_i y_{t-i} + sum Phi_j y_{t-24j} + x_t beta``.
    For ``multiplicative`` the intercept is the mean level and ``beta`` the
    regression coefficients of the errors model described in the module doc.
    Exogenous columns are standardized with ``exo_mean``/``exo_scale`` first.
    """

    intercept: float
    phi: np.ndarray
    seasonal_mode: str = "none"
    seasonal_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    period: int = 24
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    exo_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    exo_scale: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fitted_on_log: bool = True
    n_obs: int = 0
    resid_var: float = float("nan")

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.seasonal_phi = np.asarray(self.seasonal_phi, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.exo_mean = np.asarray(self.exo_mean, dtype=np.float64)
        self.exo_scale = np.asarray(self.exo_scale, dtype=np.float64)
        if self.seasonal_mode not in SEASONAL_MODES:
            raise ValueError(f"unknown seasonal mode {self.seasonal_mode!r}")
        if self.seasonal_mode == "none" and self.seasonal_phi.size:
            raise ValueError("seasonal coefficients given for a non-seasonal model")
        if not (self.beta.size == self.exo_mean.size == self.exo_scale.size):
            raise ValueError("exogenous coefficient and scaling sizes differ")

    @property
    def n_params(self) -> int:
        return 1 + self.phi.size + self.seasonal_phi.size + self.beta.size

    @property
    def max_lag(self) -> int:
        p, big_p = self.phi.size, self.seasonal_phi.size
        if self.seasonal_mode == "multiplicative":
            return p + self.period * big_p
        return max(p, self.period * big_p)

    def scale_exo(self, exo: np.ndarray) -> np.ndarray:
        return (exo - self.exo_mean) / self.exo_scale

    def lag_polynomial(self) -> np.ndarray:
        """Coefficients psi_k (k = 1..max_lag) of the AR recursion y_t = ... + sum psi_k y_{t-k}."""
        poly = np.zeros(self.max_lag + 1)
        poly[0] = 1.0
        poly[1:self.phi.size + 1] -= self.phi
        if self.seasonal_mode == "multiplicative":
            seasonal = np.zeros(self.period * self.seasonal_phi.size + 1)
            seasonal[0] = 1.0
            seasonal[self.period::self.period] = -self.seasonal_phi
            poly = np.convolve(poly[:self.phi.size + 1], seasonal)
        elif self.seasonal_phi.size:
            for j, c in enumerate(self.seasonal_phi, start=1):
                poly[self.period * j] -= c
        return -poly[1:]


# --- least squares machinery -------------------------------------------------


def ols_qr(design: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares by Householder QR; raises on a rank-deficient design."""
    q, r = np.linalg.qr(design)
    cond = np.linalg.cond(r)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankDeficiencyError(f"design matrix is rank deficient (condition number {cond:.3g})")
    coef = solve_triangular(r, q.T @ target)
    return coef, target - design @ coef


def lagged_design(y: np.ndarray, lags, start: int) -> np.ndarray:
    n = len(y)
    return np.column_stack([y[start - k:n - k] for k in lags]) if lags else np.zeros((n - start, 0))


def _standardize_exo(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (x - mean) / scale, mean, scale


def fit_ar(log_prices, order: int = 6) -> LinearAutoregressor:
    """Model 1: AR(order) with intercept by OLS."""
    y = _values(log_prices)
    n_params = order + 1
    if len(y) <= 10 * n_params:
        raise InsufficientDataError(f"need more than {10 * n_params} observations, got {len(y)}")
    design = np.column_stack([np.ones(len(y) - order), lagged_design(y, range(1, order + 1), order)])
    coef, resid = ols_qr(design, y[order:])
    return LinearAutoregressor(coef[0], coef[1:], n_obs=len(resid), resid_var=float(resid @ resid / len(resid)))


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool


def levenberg_marquardt(residuals, jacobian, x0, max_iter: int = 200,
                        ftol: float = 1e-12, xtol: float = 1e-10) -> LMResult:
    """Minimize ||residuals(x)||^2 with Marquardt-scaled damping.

    Raises :class:`NonConvergenceError` if the tolerances are not met within
    ``max_iter`` iterations.
    """
    x = np.array(x0, dtype=np.float64)
    r = residuals(x)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        jac = jacobian(x)
        grad = jac.T @ r
        normal = jac.T @ jac
        scale = np.maximum(np.diag(normal), 1e-12)
        while True:
            try:
                step = np.linalg.solve(normal + lam * np.diag(scale), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                x_new = x + step
                r_new = residuals(x_new)
                cost_new = float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new <= cost:
                    break
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left: x is a stationary point
                return LMResult(x, cost, it, True)
        reduction = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10.0, 1e-12)
        if reduction <= ftol * max(cost, 1e-300) or np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
            return LMResult(x, cost, it, True)
    raise NonConvergenceError(f"Levenberg-Marquardt did not converge in {max_iter} iterations")


class _SeasonalErrors:
    """Residuals and Jacobian of phi(B) Phi(B^s) (y - mu - X beta)."""

    def __init__(self, y, x, p, big_p, period):
        self.y, self.x = y, x
        self.p, self.big_p, self.s = p, big_p, period
        self.k = x.shape[1]
        self.t0 = p + period * big_p

    def unpack(self, theta):
        k, p = self.k, self.p
        return theta[0], theta[1:1 + k], theta[1 + k:1 + k + p], theta[1 + k + p:]

    def _ar(self, u, phi):
        p, n = self.p, len(u)
        out = u[p:].copy()
        for i, c in enumerate(phi, start=1):
            out -= c * u[p - i:n - i]
        return out

    def _seasonal(self, v, big_phi):
        off = self.s * self.big_p
        out = v[off:].copy()
        for j, c in enumerate(big_phi, start=1):
            out -= c * v[off - self.s * j:len(v) - self.s * j]
        return out

    def filt(self, u, phi, big_phi):
        return self._seasonal(self._ar(u, phi), big_phi)

    def w(self, theta):
        mu, beta, _, _ = self.unpack(theta)
        return self.y - mu - self.x @ beta

    def residuals(self, theta):
        _, _, phi, big_phi = self.unpack(theta)
        return self.filt(self.w(theta), phi, big_phi)

    def jacobian(self, theta):
        _, _, phi, big_phi = self.unpack(theta)
        w = self.w(theta)
        n, p, s, off = len(self.y), self.p, self.s, self.s * self.big_p
        m = n - self.t0
        cols = [np.full(m, -(1.0 - phi.sum()) * (1.0 - big_phi.sum()))]
        cols.extend(-self.filt(self.x[:, j], phi, big_phi) for j in range(self.k))
        # d e_t / d phi_i = -Phi(B^s) w_{t-i}
        w_seasonal = w[off:].copy()
        for j, c in enumerate(big_phi, start=1):
            w_seasonal -= c * w[off - s * j:n - s * j]
        # w_seasonal[u] corresponds to time u + off
        for i in range(1, p + 1):
            cols.append(-w_seasonal[p - i:p - i + m])
        v = self._ar(w, phi)  # v[u] corresponds to time u + p
        for j in range(1, self.big_p + 1):
            cols.append(-v[off - s * j:off - s * j + m])
        return np.column_stack(cols)

    def objective(self, theta) -> float:
        r = self.residuals(theta)
        return float(r @ r)


def fit_sarx(log_prices, exo=None, order: int = 6, seasonal_order: int = 2, period: int = 24,
             mode: str = "multiplicative", max_iter: int = 200) -> LinearAutoregressor:
    """Model 2: seasonal AR with exogenous regressors (no differencing, no MA terms)."""
    if mode not in ("additive", "multiplicative"):
        raise ValueError(f"mode must be 'additive' or 'multiplicative', got {mode!r}")
    y = _values(log_prices)
    x_raw = _exo_matrix(exo)
    if x_raw is None:
        x_raw = np.zeros((len(y), 0))
    if len(x_raw) != len(y):
        raise ValueError(f"exogenous rows ({len(x_raw)}) do not match prices ({len(y)})")
    x, mean, scale = _standardize_exo(x_raw)
    k = x.shape[1]
    n_params = 1 + order + seasonal_order + k
    if len(y) <= 10 * n_params:
        raise InsufficientDataError(f"need more than {10 * n_params} observations, got {len(y)}")

    lags = list(range(1, order + 1)) + [period * j for j in range(1, seasonal_order + 1)]
    start = max(lags)
    design = np.column_stack([np.ones(len(y) - start), lagged_design(y, lags, start), x[start:]])
    cond = np.linalg.cond(design)
    if cond > 1e8:
        warnings.warn(f"near-singular SARX design (condition number {cond:.3g})", NearSingularWarning)
    coef, resid = ols_qr(design, y[start:])
    intercept, phi = coef[0], coef[1:1 + order]
    big_phi, gamma = coef[1 + order:1 + order + seasonal_order], coef[1 + order + seasonal_order:]
    additive = LinearAutoregressor(intercept, phi, "additive", big_phi, period, gamma, mean, scale,
                                   n_obs=len(resid), resid_var=float(resid @ resid / len(resid)))
    if mode == "additive":
        return additive

    problem = _SeasonalErrors(y, x, order, seasonal_order, period)
    theta0 = warm_start(additive, y, x)
    result = levenberg_marquardt(problem.residuals, problem.jacobian, theta0, max_iter=max_iter)
    mu, beta, phi_m, big_phi_m = problem.unpack(result.x)
    m = len(y) - problem.t0
    return LinearAutoregressor(mu, phi_m, "multiplicative", big_phi_m, period, beta, mean, scale,
                               n_obs=m, resid_var=result.cost / m)


def warm_start(additive: LinearAutoregressor, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Map an additive ARX fit onto the (mu, beta, phi, Phi) parameterization."""
    persistence = 1.0 - additive.phi.sum() - additive.seasonal_phi.sum()
    if abs(persistence) > 1e-3:
        mu, beta = additive.intercept / persistence, additive.beta / persistence
    else:
        coef, _ = ols_qr(np.column_stack([np.ones(len(y)), x]), y)
        mu, beta = coef[0], coef[1:]
    return np.concatenate([[mu], beta, additive.phi, additive.seasonal_phi])


def css_objective(model: LinearAutoregressor, log_prices, exo=None) -> float:
    """Conditional sum of squares of the multiplicative errors model at ``model``'s parameters."""
    y = _values(log_prices)
    x_raw = _exo_matrix(exo)
    x = np.zeros((len(y), 0)) if x_raw is None else model.scale_exo(x_raw)
    problem = _SeasonalErrors(y, x, model.phi.size, model.seasonal_phi.size, model.period)
    theta = np.concatenate([[model.intercept], model.beta, model.phi, model.seasonal_phi])
    return problem.objective(theta)


def forecast_recursive_log(model: LinearAutoregressor, history, future_exo=None, history_exo=None,
                           horizon: int = 24) -> np.ndarray:
    """Iterate the AR recursion ``horizon`` steps, feeding predictions back as lags."""
    y_hist = _values(history)
    if len(y_hist) < model.max_lag:
        raise InsufficientDataError(f"history must cover {model.max_lag} lags, got {len(y_hist)}")
    k = model.beta.size
    fut = np.zeros((horizon, 0))
    if k:
        if future_exo is None:
            raise MissingExogenousError("model has exogenous regressors but no future_exo was given")
        fut = _exo_matrix(future_exo)
        if fut.shape != (horizon, k):
            raise ValueError(f"future_exo must have shape {(horizon, k)}, got {fut.shape}")
        fut = model.scale_exo(fut)
    psi = model.lag_polynomial()
    lags = np.arange(1, psi.size + 1)
    if model.seasonal_mode == "multiplicative":
        if k:
            if history_exo is None:
                raise MissingExogenousError("multiplicative model needs history_exo to recover past errors")
            hist_x = _exo_matrix(history_exo)
            if len(hist_x) != len(y_hist):
                raise ValueError("history_exo rows do not match history")
            level_hist = model.intercept + model.scale_exo(hist_x) @ model.beta
        else:
            level_hist = np.full(len(y_hist), model.intercept)
        level_fut = model.intercept + (fut @ model.beta if k else np.zeros(horizon))
        w = list(y_hist - level_hist)
        out = np.empty(horizon)
        for h in range(horizon):
            nxt = float(np.dot(psi, [w[-l] for l in lags])) if psi.size else 0.0
            w.append(nxt)
            out[h] = level_fut[h] + nxt
        return out
    y = list(y_hist)
    out = np.empty(horizon)
    for h in range(horizon):
        nxt = model.intercept + (float(np.dot(psi, [y[-l] for l in lags])) if psi.size else 0.0)
        if k:
            nxt += float(fut[h] @ model.beta)
        y.append(nxt)
        out[h] = nxt
    return out


def forecast_recursive(model: LinearAutoregressor, history, future_exo=None, history_exo=None,
                       horizon: int = 24) -> np.ndarray:
    """Prices in $/MWh for the next ``horizon`` hours."""
    log_fc = forecast_recursive_log(model, history, future_exo, history_exo, horizon)
    return np.exp(log_fc) if model.fitted_on_log else log_fc


# --- Model 3 -----------------------------------------------------------------


@dataclass
class StatelessNet:
    params: dict[str, np.ndarray]
    seed: int
    hidden: tuple[int, int] = (64, 32)

    def predict_log(self, features) -> np.ndarray:
        x = ad.leaf(np.asarray(features, dtype=np.float64))
        p = {k: ad.leaf(v) for k, v in self.params.items()}
        return _mlp_graph(p, x).value[:, 0]

    def predict(self, features) -> np.ndarray:
        return np.exp(self.predict_log(features))

    def copy(self) -> "StatelessNet":
        return StatelessNet({k: v.copy() for k, v in self.params.items()}, self.seed, self.hidden)


def _mlp_graph(p, x):
    h1 = ad.relu(ad.dense(x, p["l1.w"], p["l1.b"]))
    h2 = ad.relu(ad.dense(h1, p["l2.w"], p["l2.b"]))
    return ad.dense(h2, p["out.w"], p["out.b"])


def init_stateless(n_features: int, seed: int, hidden=(64, 32), output_bias: float = 0.0) -> StatelessNet:
    rng = np.random.default_rng(seed)
    sizes = [n_features, *hidden, 1]
    params = {}
    for name, fan_in, fan_out in zip(("l1", "l2", "out"), sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}.w"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)
    params["out.b"][0] = output_bias
    return StatelessNet(params, seed, tuple(hidden))


@dataclass
class StatelessFit:
    net: StatelessNet
    history: list[tuple[int, float, float]]
    best_val_mae: float


def fit_stateless(features, log_prices, seed: int = 0, tc: TrainConfig | None = None,
                  batch_size: int = 256, init: StatelessNet | None = None) -> StatelessFit:
    """Model 3: MLP (64, 32, ReLU) trained on MAE with Adam and early stopping.

    ``init`` warm-starts from a previous fit (daily retraining).
    """
    tc = (tc or TrainConfig(rng_seed=seed)).validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(log_prices, dtype=np.float64).reshape(-1, 1)
    if len(x) < 100:
        raise InsufficientDataError(f"need at least 100 (features, price) pairs, got {len(x)}")
    if len(x) != len(y):
        raise ValueError("features and targets differ in length")
    if batch_size < 1:
        raise InvalidConfigError("batch_size must be positive")
    n_train = split_validation(len(x), tc.validation_fraction)
    xt, yt, xv, yv = x[:n_train], y[:n_train], x[n_train:], y[n_train:]
    net = init.copy() if init is not None else init_stateless(x.shape[1], seed,
                                                              output_bias=float(np.median(yt)))
    best = net.copy()
    opt = Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon)
    stopper = EarlyStopping(tc.patience, tc.min_delta)
    rng = np.random.default_rng(tc.rng_seed)
    history = []
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(n_train)
        running = 0.0
        for s in range(0, n_train, batch_size):
            idx = order[s:s + batch_size]
            p = {k: ad.leaf(v) for k, v in net.params.items()}
            loss = ad.mae(_mlp_graph(p, ad.leaf(xt[idx])), ad.leaf(yt[idx]))
            if not math.isfinite(loss.value[0]):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            ad.backward(loss)
            opt.step(net.params, {k: n.grad for k, n in p.items()})
            running += loss.value[0] * len(idx)
        val = float(np.mean(np.abs(net.predict_log(xv) - yv[:, 0])))
        history.append((epoch, running / n_train, val))
        improved, stop = stopper.update(epoch, val)
        if improved:
            best = net.copy()
        if stop:
            break
    return StatelessFit(best, history, stopper.best)
