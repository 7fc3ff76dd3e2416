"""Disturbance forecasts for the controller.

Three products:

* exogenous thermal power w(k): an open-loop weather regressor plus per-lead
  autoregressive corrections driven by its recent errors;
* water-draw scenarios: continuations of the past days whose recent draw
  history best matches the live one;
* per-hour quantiles of the current drawn by appliances the controller
  cannot touch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

SCHEMA_TAG = "ampguard.exog-forecast/1"


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class WeatherPoint:
    hour_of_day: float
    t_out: float
    wind: float = 0.0
    ghi: float = 0.0

    def __post_init__(self):
        if not 0 <= self.hour_of_day < 24:
            raise ValueError(f"hour_of_day must lie in [0, 24), got {self.hour_of_day}")
        if self.wind < 0 or self.ghi < 0:
            raise ValueError("wind and ghi must be non-negative")


def weather_features(points: Sequence[WeatherPoint]) -> np.ndarray:
    """Hour as a sin/cos pair, then outdoor temperature, wind and irradiance."""
    h = np.array([p.hour_of_day for p in points], dtype=float)
    ang = 2.0 * np.pi * h / 24.0
    return np.column_stack([
        np.sin(ang), np.cos(ang),
        [p.t_out for p in points], [p.wind for p in points], [p.ghi for p in points],
    ])


# --------------------------------------------------------------- open loop
@dataclass
class KernelRidge:
    """Radial-basis kernel ridge regression on standardized features."""

    ridge: float = 1e-3
    bandwidth: float | None = None
    max_train: int = 2000
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    support: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def _std(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def _kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return np.exp(-np.maximum(d2, 0.0) / (2.0 * self.bandwidth ** 2))

    def fit(self, X: np.ndarray, y: np.ndarray) -> "KernelRidge":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise TrainingError("feature rows and targets must align")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise TrainingError("non-finite training data")
        if X.shape[0] > self.max_train:
            # deterministic thinning keeps the whole time span
            idx = np.linspace(0, X.shape[0] - 1, self.max_train).round().astype(int)
            X, y = X[idx], y[idx]
        self.x_mean = X.mean(0)
        scale = X.std(0)
        if not (scale > 1e-12).any():
            raise TrainingError("every feature is constant")
        self.x_scale = np.where(scale > 1e-12, scale, 1.0)
        Z = self._std(X)
        if self.bandwidth is None:
            sub = Z[np.linspace(0, len(Z) - 1, min(len(Z), 500)).astype(int)]
            d = np.sqrt(np.maximum(((sub[:, None, :] - sub[None, :, :]) ** 2).sum(-1), 0.0))
            med = float(np.median(d[np.triu_indices(len(sub), 1)])) if len(sub) > 1 else 1.0
            self.bandwidth = med if med > 0 else 1.0
        self.y_mean = float(y.mean())
        K = self._kernel(Z, Z)
        n = len(Z)
        self.alpha = np.linalg.solve(K + self.ridge * n * np.eye(n), y - self.y_mean)
        self.support = Z
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.alpha is None:
            raise RuntimeError("model is not fitted")
        Z = self._std(np.atleast_2d(X))
        return self.y_mean + self._kernel(Z, self.support) @ self.alpha

    def to_dict(self) -> dict:
        return {
            "kind": "kernel_ridge", "ridge": self.ridge, "bandwidth": self.bandwidth,
            "max_train": self.max_train, "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(), "y_mean": self.y_mean,
            "support": self.support.tolist(), "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelRidge":
        if d.get("kind") != "kernel_ridge":
            raise ValueError(f"unsupported regressor kind {d.get('kind')!r}")
        return cls(d["ridge"], d["bandwidth"], d["max_train"], np.array(d["x_mean"]),
                   np.array(d["x_scale"]), d["y_mean"], np.array(d["support"]), np.array(d["alpha"]))


def train_open_loop(features: Sequence[WeatherPoint], targets: Sequence[float],
                    ridge: float = 1e-3, max_train: int = 2000) -> KernelRidge:
    if len(features) < 50:
        raise TrainingError(f"need at least 50 samples, got {len(features)}")
    return KernelRidge(ridge=ridge, max_train=max_train).fit(weather_features(features), targets)


# ------------------------------------------------------------ error models
@dataclass(frozen=True)
class ArErrorModel:
    """Predicts the open-loop error ``lead`` steps past the newest known one.

    ``beta[0]`` is the intercept; ``beta[1:]`` weight the last ``memory``
    errors, oldest first.
    """

    beta: tuple[float, ...]
    sigma: float
    memory: int
    lead: int = 0
    train_sigma: float = 0.0
    ill_conditioned: bool = False

    def __post_init__(self):
        if len(self.beta) != self.memory + 1:
            raise ValueError("beta must hold memory + 1 coefficients")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def predict(self, recent: np.ndarray) -> float:
        b = np.asarray(self.beta)
        return float(b[0] + b[1:] @ np.asarray(recent)[-self.memory:])


def ar_design(errors: np.ndarray, lead: int, memory: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows [1, e(j), ..., e(j+M-1)] with target e(j+M+lead)."""
    e = np.asarray(errors, dtype=float)
    rows = e.size - memory - lead
    if rows <= 0:
        return np.zeros((0, memory + 1)), np.zeros(0)
    win = np.lib.stride_tricks.sliding_window_view(e, memory)[:rows]
    X = np.column_stack([np.ones(rows), win])
    y = e[memory + lead: memory + lead + rows]
    return X, y


def _lstsq(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    G = X.T @ X
    cond = np.linalg.cond(G) if G.size else np.inf
    if not np.isfinite(cond) or cond > 1e12:
        return np.linalg.pinv(X) @ y, True
    return np.linalg.solve(G, X.T @ y), False


def fit_ar_errors(errors: Sequence[float], lead: int, memory: int,
                  val_frac: float = 1.0 / 3.0) -> ArErrorModel:
    """Least-squares AR fit on the earlier part of ``errors``; sigma from the rest.

    With ``val_frac = 0`` the whole series is used and sigma is the training
    residual spread.
    """
    e = np.asarray(errors, dtype=float)
    if e.size <= memory + lead + 1:
        raise TrainingError(f"series of {e.size} too short for memory {memory}, lead {lead}")
    X, y = ar_design(e, lead, memory)
    n_val = int(round(val_frac * len(y)))
    if len(y) - n_val < memory + 1:
        n_val = 0
    Xtr, ytr = X[: len(y) - n_val], y[: len(y) - n_val]
    beta, ill = _lstsq(Xtr, ytr)
    train_sigma = float(np.std(ytr - Xtr @ beta))
    sigma = float(np.std(y[len(y) - n_val:] - X[len(y) - n_val:] @ beta)) if n_val >= 2 else train_sigma
    return ArErrorModel(tuple(float(b) for b in beta), sigma, memory, lead, train_sigma, ill)


def select_ar_model(errors: Sequence[float], lead: int, memories: Sequence[int] = range(1, 13),
                    val_frac: float = 1.0 / 3.0) -> ArErrorModel:
    """Fit each candidate memory and keep the one with the lowest validation spread."""
    best = None
    for m in memories:
        try:
            mod = fit_ar_errors(errors, lead, m, val_frac)
        except TrainingError:
            continue
        if best is None or mod.sigma < best.sigma - 1e-15:
            best = mod
    if best is None:
        raise TrainingError("error series too short for every candidate memory")
    return best


@dataclass
class ExogForecastModel:
    open_loop: KernelRidge
    ar_models: list[ArErrorModel]
    horizon_l: int = 12

    def __post_init__(self):
        if self.horizon_l < 1 or len(self.ar_models) != self.horizon_l:
            raise ValueError("need one AR model per lead below horizon_l")

    @property
    def max_memory(self) -> int:
        return max(m.memory for m in self.ar_models)

    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.ar_models])

    def to_json(self) -> str:
        return json.dumps({
            "schema": SCHEMA_TAG,
            "horizon_l": self.horizon_l,
            "open_loop": self.open_loop.to_dict(),
            "ar_models": [m.__dict__ for m in self.ar_models],
        })

    @classmethod
    def from_json(cls, text: str) -> "ExogForecastModel":
        d = json.loads(text)
        if d.get("schema") != SCHEMA_TAG:
            raise ValueError(f"expected schema {SCHEMA_TAG!r}, got {d.get('schema')!r}")
        ars = [ArErrorModel(**{**m, "beta": tuple(m["beta"])}) for m in d["ar_models"]]
        return cls(KernelRidge.from_dict(d["open_loop"]), ars, d["horizon_l"])

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ExogForecastModel":
        return cls.from_json(Path(path).read_text())


def fit_exog_model(weather: Sequence[WeatherPoint], w: Sequence[float], horizon_l: int = 12,
                   memories: Sequence[int] = range(1, 13), ridge: float = 1e-3,
                   train_frac: float = 2.0 / 3.0) -> tuple[ExogForecastModel, dict]:
    """Train the regressor on the earlier part and AR models on its errors elsewhere.

    The AR models must see out-of-sample errors, so they are fitted on the
    regressor's residuals over the held-out tail.
    """
    w = np.asarray(w, dtype=float)
    n_tr = int(round(train_frac * len(w)))
    reg = train_open_loop(weather[:n_tr], w[:n_tr], ridge=ridge)
    pred = reg.predict(weather_features(weather))
    resid = w - pred
    tail = resid[n_tr:]
    ars = [select_ar_model(tail, lead, memories) for lead in range(horizon_l)]
    diag = {
        "train_rmse": float(np.sqrt(np.mean(resid[:n_tr] ** 2))),
        "val_rmse": float(np.sqrt(np.mean(tail ** 2))) if tail.size else float("nan"),
        "sigmas": [m.sigma for m in ars],
        "memories": [m.memory for m in ars],
    }
    return ExogForecastModel(reg, ars, horizon_l), diag


@dataclass(frozen=True)
class Forecast:
    values: np.ndarray
    open_loop: np.ndarray
    corrected: bool


def full_forecast(model: ExogForecastModel, recent_errors: Sequence[float],
                  weather: Sequence[WeatherPoint]) -> Forecast:
    """Open-loop prediction, corrected by the AR models for leads below L.

    Falls back to the open-loop values (``corrected=False``) when fewer
    errors are known than the longest AR memory.
    """
    ol = model.open_loop.predict(weather_features(weather))
    recent = np.asarray(recent_errors, dtype=float)
    out = ol.copy()
    if recent.size < model.max_memory:
        return Forecast(out, ol, False)
    for lead, ar in enumerate(model.ar_models[: len(out)]):
        out[lead] = ol[lead] + ar.predict(recent)
    return Forecast(out, ol, True)


def default_lambda(t_out: float) -> float:
    """Fewer standard deviations of pessimism in deep cold, where heating already runs hard."""
    return 1.0 if t_out < -10.0 else 1.5


def pessimize(forecast: Sequence[float], sigmas: Sequence[float],
              lambda_schedule: Callable[[float], float] | Sequence[float] = default_lambda,
              t_out: Sequence[float] | None = None) -> np.ndarray:
    """Shift the forecast down by lambda(k) sigma(k); sigma is held past its last lead."""
    f = np.asarray(forecast, dtype=float)
    s = np.asarray(sigmas, dtype=float)
    K = f.size
    sig = np.concatenate([s[:K], np.full(max(0, K - s.size), s[-1] if s.size else 0.0)])
    if callable(lambda_schedule):
        if t_out is None or len(t_out) != K:
            raise ValueError("t_out must match the forecast length")
        lam = np.array([lambda_schedule(t) for t in t_out])
    else:
        lam = np.asarray(lambda_schedule, dtype=float)
        if lam.size != K:
            raise ValueError("lambda schedule must match the forecast length")
    return f - lam * sig


# ------------------------------------------------------------ water draws
@dataclass
class WaterDrawHistory:
    """Hourly heat-transfer rate out of the tank (kW), oldest first."""

    start: datetime
    values: np.ndarray
    retention_days: int = 30

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if (self.values < 0).any():
            raise ValueError("water-draw heat rates must be non-negative")
        self.start = self.start.replace(minute=0, second=0, microsecond=0)

    def index_of(self, t: datetime) -> int:
        return int((t - self.start) // timedelta(hours=1))

    def append(self, value: float):
        self.values = np.append(self.values, max(0.0, value))
        keep = self.retention_days * 24 + 24
        if self.values.size > keep:
            drop = self.values.size - keep
            self.values = self.values[drop:]
            self.start += timedelta(hours=drop)


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: np.ndarray  # (S, K) kW
    days_back: tuple[int, ...] = ()
    maes: tuple[float, ...] = ()
    padded: bool = False

    def __post_init__(self):
        if self.scenarios.ndim != 2 or self.scenarios.shape[0] < 1:
            raise ValueError("scenarios must be an (S, K) array with S >= 1")
        if (self.scenarios < 0).any():
            raise ValueError("scenario values must be non-negative")

    @property
    def s(self) -> int:
        return self.scenarios.shape[0]


def water_scenarios(history: WaterDrawHistory, now: datetime, s: int, horizon: int,
                    step_minutes: int = 5, window_hours: int = 8,
                    continuation_hours: int = 12) -> ScenarioSet:
    """Continuations of the ``s`` past days whose trailing window best matches today's.

    Days are ranked by mean absolute error between their ``window_hours``
    ending at the current clock hour and the live window; ties go to the
    earliest day.  Each hourly value is held for every control step inside
    that hour.
    """
    per_hour = 60 // step_minutes
    hour0 = now.replace(minute=0, second=0, microsecond=0)
    skip = (now.minute // step_minutes) if now > hour0 else 0
    need_hours = max(continuation_hours, math.ceil((horizon + skip) / per_hour))
    now_idx = history.index_of(hour0)
    v = history.values
    live_lo = now_idx - window_hours
    live = v[live_lo:now_idx] if live_lo >= 0 and now_idx <= v.size else None

    ranked: list[tuple[float, int, int]] = []  # (mae, -day, day)
    if live is not None and live.size == window_hours:
        for day in range(1, history.retention_days + 1):
            idx = now_idx - 24 * day
            if idx - window_hours < 0 or idx + need_hours > now_idx:
                continue
            mae = float(np.mean(np.abs(v[idx - window_hours: idx] - live)))
            ranked.append((mae, -day, day))
    ranked.sort()

    rows, days, maes = [], [], []
    for mae, _, day in ranked[:s]:
        idx = now_idx - 24 * day
        hourly = v[idx: idx + need_hours]
        steps = np.repeat(hourly, per_hour)[skip: skip + horizon]
        rows.append(steps)
        days.append(day)
        maes.append(mae)
    padded = len(rows) < s
    while len(rows) < s:
        if rows:
            rows.append(rows[0].copy())
            days.append(days[0])
            maes.append(maes[0])
        else:
            rows.append(np.zeros(horizon))
            days.append(0)
            maes.append(float("nan"))
    return ScenarioSet(np.vstack(rows), tuple(days), tuple(maes), padded)


# ------------------------------------------------------- uncontrolled loads
@dataclass(frozen=True)
class UncontrolledProfile:
    q_alpha: tuple[float, ...]
    alpha: float = 0.99
    interpolated_hours: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.q_alpha) != 24:
            raise ValueError("need one quantile per hour of day")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if min(self.q_alpha) < 0:
            raise ValueError("quantiles must be non-negative")

    def at(self, hour: float) -> float:
        return self.q_alpha[int(hour) % 24]


def uncontrolled_quantiles(current: Sequence[float], hours: Sequence[float],
                           alpha: float = 0.99) -> UncontrolledProfile:
    """Per-hour empirical ``alpha`` quantile; empty hours are filled linearly
    (wrapping around midnight) from the nearest populated neighbours."""
    i = np.asarray(current, dtype=float)
    h = np.asarray(hours).astype(int) % 24
    q = np.full(24, np.nan)
    for hour in range(24):
        sel = i[h == hour]
        if sel.size:
            q[hour] = float(np.quantile(sel, alpha))
    have = np.flatnonzero(np.isfinite(q))
    if have.size == 0:
        raise ValueError("no uncontrolled-load data")
    missing = tuple(int(x) for x in np.flatnonzero(~np.isfinite(q)))
    if missing:
        xp = np.concatenate([have - 24, have, have + 24])
        fp = np.tile(q[have], 3)
        q[list(missing)] = np.interp(missing, xp, fp)
    return UncontrolledProfile(tuple(float(max(0.0, x)) for x in q), alpha, missing)
