"""Building envelope model, its exact discretization and identification.

The envelope is a two-resistor, one-capacitor circuit (indoor air node coupled
to the outdoors through ``r_out`` and to an interior mass at ``t_mass`` through
``r_m``).  Holding ``t_mass`` constant collapses it to a single-resistor model
with effective resistance ``r_eff`` and boundary temperature ``theta``:

    C dT/dt = (theta - T) / r_eff + q_hp + w

which, for inputs held over a step of length ``dt``, integrates exactly to

    T(k+1) = a T(k) + (1 - a) [theta + r_eff (q_hp + w)],   a = exp(-dt / (r_eff C)).

Units: temperatures in degC, powers in kW, resistances in degC/kW,
capacitances in kWh/degC, times in hours.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DT_DEFAULT = 1.0 / 12.0  # 5-minute control step, in hours


class IdentificationError(ValueError):
    """Raised when the data cannot pin down the requested parameters."""


def discretize(r: float, c: float, dt: float) -> float:
    """Discrete pole exp(-dt / (r c)) of a first-order RC circuit."""
    if r <= 0 or c <= 0 or dt <= 0:
        raise ValueError(f"discretize needs positive r, c, dt (got {r}, {c}, {dt})")
    return math.exp(-dt / (r * c))


@dataclass(frozen=True)
class ThermalParams:
    r_out: float
    r_m: float
    c: float
    t_mass: float = 20.0
    w0: float = 0.0
    dt: float = DT_DEFAULT

    def __post_init__(self):
        if self.r_out <= 0 or self.r_m <= 0 or self.c <= 0 or self.dt <= 0:
            raise ValueError("r_out, r_m, c and dt must be positive")

    @property
    def r_eff(self) -> float:
        return self.r_m * self.r_out / (self.r_m + self.r_out)

    @property
    def a(self) -> float:
        return discretize(self.r_eff, self.c, self.dt)

    @classmethod
    def from_a(cls, r_out: float, r_m: float, a: float, t_mass: float = 20.0,
               w0: float = 0.0, dt: float = DT_DEFAULT) -> "ThermalParams":
        """Build from the discrete pole instead of the capacitance."""
        if not 0.0 < a < 1.0:
            raise ValueError(f"a must lie in (0, 1), got {a}")
        r_eff = r_m * r_out / (r_m + r_out)
        return cls(r_out, r_m, -dt / (r_eff * math.log(a)), t_mass, w0, dt)


def effective_boundary_temp(t_out, params: ThermalParams):
    """Resistance-weighted mix of outdoor and interior-mass temperatures."""
    r_m, r_out = params.r_m, params.r_out
    if np.ndim(t_out):
        t_out = np.asarray(t_out, dtype=float)
    return (r_m * t_out + r_out * params.t_mass) / (r_m + r_out)


def step_temperature(t_in, theta, q_hp, w, params: ThermalParams):
    a = params.a
    return a * t_in + (1.0 - a) * (theta + params.r_eff * (q_hp + w))


def invert_for_w(t_in, t_in_next, theta, q_hp, params: ThermalParams):
    """Exogenous power that carries ``t_in`` to ``t_in_next`` over one step."""
    a = params.a
    if not 0.0 < a < 1.0:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    return ((t_in_next - a * t_in) / (1.0 - a) - theta) / params.r_eff - q_hp


def simulate(t0: float, t_out: Sequence[float], q_hp: Sequence[float], w: Sequence[float],
             params: ThermalParams) -> np.ndarray:
    """Roll the discrete model forward; returns len(t_out)+1 temperatures."""
    t_out = np.asarray(t_out, dtype=float)
    out = np.empty(t_out.size + 1)
    out[0] = t0
    theta = effective_boundary_temp(t_out, params)
    for k in range(t_out.size):
        out[k + 1] = step_temperature(out[k], theta[k], q_hp[k], w[k], params)
    return out


# --------------------------------------------------------------- identification
@dataclass(frozen=True)
class OvernightSample:
    t_in: float
    t_in_next: float
    t_out: float
    q_hp: float
    steady: bool = False
    timestamp: datetime | None = None


def is_steady(t_in: float, t_in_next: float, threshold: float = 0.05) -> bool:
    return abs(t_in_next - t_in) <= threshold


def fit_steady(samples: Iterable[OvernightSample]) -> tuple[float, float]:
    """Regress T - T_out on q_hp over steady samples; returns (r_out, w0).

    At steady state the interior mass sits at the air temperature, so
    T - T_out = r_out q_hp + r_out w0.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise IdentificationError("need at least two steady samples")
    q = np.array([s.q_hp for s in samples])
    y = np.array([s.t_in - s.t_out for s in samples])
    if np.ptp(q) < 1e-9:
        raise IdentificationError("all steady samples share one q_hp value; slope is unidentifiable")
    X = np.column_stack([q, np.ones_like(q)])
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    if slope <= 0:
        raise IdentificationError(f"fitted r_out = {slope:.4g} is not positive")
    return float(slope), float(intercept / slope)


@dataclass(frozen=True)
class UnsteadyFit:
    r_m: float
    a: float
    t_mass: float
    val_mse: float
    grid_mse: tuple[float, ...] = field(default=(), repr=False)


def default_r_m_grid(r_out: float, n: int = 25, lo: float = 0.05, hi: float = 5.0) -> np.ndarray:
    return r_out * np.logspace(math.log10(lo), math.log10(hi), n)


def fit_unsteady(samples: Sequence[OvernightSample], r_out: float, w0: float,
                 r_m_grid: Sequence[float], t_mass: float | None = None,
                 train_frac: float = 2.0 / 3.0) -> UnsteadyFit:
    """Grid search over r_m, fitting the pole ``a`` by regression for each.

    For a candidate r_m, the deviation z = T - theta - r_eff (q_hp + w0) obeys
    z(k+1) = a z(k), so ``a`` is the through-origin slope of z(k+1) on z(k).
    The first ``train_frac`` of the samples (in time order) fit ``a``; the
    rest score the candidate.  ``t_mass`` defaults to the mean indoor
    temperature over the training part.
    """
    grid = [float(g) for g in r_m_grid]
    if not grid or any(g <= 0 for g in grid):
        raise IdentificationError("r_m grid must be non-empty and positive")
    samples = list(samples)
    if len(samples) < 3:
        raise IdentificationError("need at least three samples")
    t = np.array([s.t_in for s in samples])
    tn = np.array([s.t_in_next for s in samples])
    to = np.array([s.t_out for s in samples])
    q = np.array([s.q_hp for s in samples])
    n_tr = max(1, min(len(samples) - 1, int(round(train_frac * len(samples)))))
    if t_mass is None:
        t_mass = float(np.mean(t[:n_tr]))

    best: UnsteadyFit | None = None
    scores = []
    for r_m in grid:
        r_eff = r_m * r_out / (r_m + r_out)
        theta = (r_m * to + r_out * t_mass) / (r_m + r_out)
        base = theta + r_eff * (q + w0)
        x, y = t - base, tn - base
        denom = float(x[:n_tr] @ x[:n_tr])
        if denom <= 0:
            scores.append(np.inf)
            continue
        a = float(x[:n_tr] @ y[:n_tr]) / denom
        if not 0.0 < a < 1.0:
            scores.append(np.inf)
            continue
        mse = float(np.mean((y[n_tr:] - a * x[n_tr:]) ** 2))
        scores.append(mse)
        if best is None or mse < best.val_mse:
            best = UnsteadyFit(r_m, a, t_mass, mse)
    if best is None:
        raise IdentificationError("no grid candidate gives a pole in (0, 1)")
    return UnsteadyFit(best.r_m, best.a, best.t_mass, best.val_mse, tuple(scores))


@dataclass(frozen=True)
class IdentificationConfig:
    steady_threshold: float = 0.05
    night_start: int = 23
    night_end: int = 6
    grid_points: int = 25
    grid_lo: float = 0.05
    grid_hi: float = 5.0
    train_frac: float = 2.0 / 3.0


def identify(samples: Sequence[OvernightSample], cfg: IdentificationConfig = IdentificationConfig(),
             dt: float = DT_DEFAULT, t_mass: float | None = None) -> ThermalParams:
    """Two-stage identification: steady fit for (r_out, w0), then grid search."""
    steady = [s for s in samples if s.steady]
    unsteady = [s for s in samples if not s.steady]
    r_out, w0 = fit_steady(steady)
    grid = default_r_m_grid(r_out, cfg.grid_points, cfg.grid_lo, cfg.grid_hi)
    fit = fit_unsteady(unsteady, r_out, w0, grid, t_mass=t_mass, train_frac=cfg.train_frac)
    return ThermalParams.from_a(r_out, fit.r_m, fit.a, fit.t_mass, w0, dt)


# ------------------------------------------------------------------- tracking
@dataclass(frozen=True)
class TrackingParams:
    """First-order lag of indoor temperature behind the thermostat set-point.

    The device controller settles ``gamma`` below the set-point.
    """

    b: float = 0.5
    gamma: float = 0.5
    dt: float = DT_DEFAULT

    def __post_init__(self):
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"b must lie in (0, 1), got {self.b}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def tau(self) -> float:
        return -self.dt / math.log(self.b)

    @classmethod
    def from_tau(cls, tau: float, gamma: float = 0.5, dt: float = DT_DEFAULT) -> "TrackingParams":
        return cls(discretize(tau, 1.0, dt), gamma, dt)


def track_setpoint(t_in, setpoint, tp: TrackingParams):
    return tp.b * t_in + (1.0 - tp.b) * (setpoint - tp.gamma)


# ------------------------------------------------------------------------ I/O
def read_series_csv(path: str | Path) -> list[dict]:
    """Read ``timestamp,t_in,t_out,q_hp`` rows, checking order and finiteness."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "t_in", "t_out", "q_hp"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        prev = None
        for lineno, rec in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(rec["timestamp"])
                vals = {k: float(rec[k]) for k in ("t_in", "t_out", "q_hp")}
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if not all(map(math.isfinite, vals.values())):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            if prev is not None and ts <= prev:
                raise ValueError(f"{path}:{lineno}: timestamps must increase strictly")
            prev = ts
            rows.append({"timestamp": ts, **vals})
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def _in_night(hour: int, start: int, end: int) -> bool:
    return hour >= start or hour < end if start > end else start <= hour < end


def overnight_samples(rows: Sequence[dict], cfg: IdentificationConfig = IdentificationConfig(),
                      dt: float = DT_DEFAULT) -> list[OvernightSample]:
    """Pair consecutive rows one step apart inside the overnight window."""
    out = []
    step = dt * 3600.0
    for r0, r1 in zip(rows[:-1], rows[1:]):
        if abs((r1["timestamp"] - r0["timestamp"]).total_seconds() - step) > 1.0:
            continue
        if not _in_night(r0["timestamp"].hour, cfg.night_start, cfg.night_end):
            continue
        out.append(OvernightSample(r0["t_in"], r1["t_in"], r0["t_out"], r0["q_hp"],
                                   is_steady(r0["t_in"], r1["t_in"], cfg.steady_threshold),
                                   r0["timestamp"]))
    return out


def write_params(params: ThermalParams, path: str | Path):
    d = asdict(params)
    d.update(r_eff=params.r_eff, a=params.a)
    Path(path).write_text("".join(f"{k} = {v!r}\n" for k, v in d.items()))


def read_params(path: str | Path) -> ThermalParams:
    d = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        d[k] = float(v)
    missing = {"r_out", "r_m", "c"} - d.keys()
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    return ThermalParams(d["r_out"], d["r_m"], d["c"], d.get("t_mass", 20.0), d.get("w0", 0.0),
                         d.get("dt", DT_DEFAULT))
