"""Fast rule-based safety layer running between high-level plans.

Every 30 s it reads whole-home current, backup-heat stage, hot-water use and
the heat pump's supply-air temperature, and either passes the planner's
set-points through or overrides them to shed load.  Defrost cycles are
anticipated from a short autoregression on supply-air temperature: the
temperature sags as frost builds, and a defrost starts once it would fall
below the return-air temperature.
"""

from __future__ import annotations

import csv
import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

N_LAGS = 11


class Reason(str, enum.Enum):
    NONE = "none"
    OVER_LIMIT = "over_limit"
    UNEXPECTED_BACKUP = "unexpected_backup"
    DEFROST = "defrost"
    DEFROST_STAGE3 = "defrost_stage3"
    EFFICIENCY = "efficiency"
    HOLD = "hold"
    STALE = "stale"
    CLAMPED = "clamped"


@dataclass(frozen=True)
class LowLevelConfig:
    engage_current: float = 90.0
    hp_floor: float = 17.0
    setpoint_range: tuple[float, float] = (17.0, 23.0)
    efficiency_setpoint: float = 49.0
    significant_draw_kw: float = 1.0
    stage2_above: float = -9.4  # t_out above this -> Stage I (code 2) during defrost
    stage3_from: float = -15.0  # t_out in [stage3_from, stage2_above] -> Stage II (code 3)
    hold_steps: int = 10  # one 5-minute planning step at 30 s
    step_seconds: float = 30.0

    def __post_init__(self):
        lo, hi = self.setpoint_range
        if not lo <= self.hp_floor <= hi:
            raise ValueError("hp_floor must lie in the set-point range")
        if self.stage3_from > self.stage2_above:
            raise ValueError("defrost stage thresholds out of order")


@dataclass(frozen=True)
class LowLevelInputs:
    whole_home_current: float
    backup_stage: int
    water_flow_active: bool
    t_w: float
    supply_temps: tuple[float, ...]  # oldest first
    return_temp: float
    hp_on: bool
    t_out: float
    hl_air_setpoint: float
    hl_water_setpoint: float
    age_seconds: float = 0.0

    def __post_init__(self):
        if self.whole_home_current < 0:
            raise ValueError("current must be non-negative")


@dataclass(frozen=True)
class Command:
    wh_enabled: bool
    wh_setpoint: float
    hp_setpoint: float
    reason: Reason = Reason.NONE


@dataclass(frozen=True)
class DefrostPredictor:
    """One-step supply-air forecast T(k+1) = sum_l coeffs[l] * T(k-l)."""

    coeffs: tuple[float, ...]
    ill_conditioned: bool = False

    def __post_init__(self):
        if len(self.coeffs) != N_LAGS:
            raise ValueError(f"need exactly {N_LAGS} coefficients")

    def predict_next(self, ring: Sequence[float]) -> float:
        if len(ring) < N_LAGS:
            raise ValueError(f"need the last {N_LAGS} supply temperatures")
        recent = np.asarray(ring[-N_LAGS:], dtype=float)[::-1]  # newest first
        return float(np.dot(self.coeffs, recent))


def fit_supply_ar(history: Sequence[float], min_samples: int = 200) -> DefrostPredictor:
    """Least-squares 11-lag autoregression (no intercept) on supply temperature."""
    y = np.asarray(history, dtype=float)
    if y.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {y.size}")
    # row for target y[t]: y[t-1], ..., y[t-11]
    X = np.column_stack([y[N_LAGS - 1 - l:y.size - 1 - l] for l in range(N_LAGS)])
    target = y[N_LAGS:]
    gram = X.T @ X
    ill = np.linalg.cond(gram) > 1e12
    if ill:
        coef = np.linalg.pinv(X) @ target
    else:
        coef = np.linalg.solve(gram, X.T @ target)
    return DefrostPredictor(tuple(float(c) for c in coef), bool(ill))


def defrost_stage(t_out: float, config: LowLevelConfig = LowLevelConfig()) -> int:
    """Backup stage code engaged during a defrost at this outdoor temperature."""
    if t_out > config.stage2_above:
        return 2
    if t_out >= config.stage3_from:
        return 3
    return 4


def predict_defrost(pred: DefrostPredictor, inputs: LowLevelInputs,
                    config: LowLevelConfig = LowLevelConfig()) -> tuple[bool, int]:
    stage = defrost_stage(inputs.t_out, config)
    if not inputs.hp_on or len(inputs.supply_temps) < N_LAGS:
        return False, stage
    return pred.predict_next(inputs.supply_temps) < inputs.return_temp, stage


def low_level_step(inputs: LowLevelInputs, pred: DefrostPredictor,
                   config: LowLevelConfig = LowLevelConfig()) -> Command:
    """Stateless rule evaluation; exactly one rule decides the command."""
    lo, hi = config.setpoint_range
    air = inputs.hl_air_setpoint
    water = inputs.hl_water_setpoint
    floor = min(config.hp_floor, air)

    if inputs.whole_home_current > config.engage_current:
        return Command(False, water, floor, Reason.OVER_LIMIT)
    if inputs.backup_stage in (3, 4):
        return Command(False, water, air, Reason.UNEXPECTED_BACKUP)
    imminent, stage = predict_defrost(pred, inputs, config)
    if imminent:
        if stage == 4:
            return Command(False, water, floor, Reason.DEFROST_STAGE3)
        return Command(False, water, air, Reason.DEFROST)
    if inputs.water_flow_active and inputs.t_w >= config.efficiency_setpoint:
        return Command(True, min(water, config.efficiency_setpoint), air, Reason.EFFICIENCY)
    if not lo <= air <= hi:
        return Command(True, water, min(max(air, lo), hi), Reason.CLAMPED)
    return Command(True, water, air, Reason.NONE)


_LOG_HEADER = ["timestamp", "wh_enabled", "wh_setpoint", "hp_setpoint", "reason"]


@dataclass
class LowLevelController:
    """Stateful wrapper: supply-air ring buffer, override hold, stale handling.

    After an over-limit or Stage III defrost override the lowered heat-pump
    set-point is held for ``config.hold_steps`` steps before the planner's value
    is restored.
    """

    predictor: DefrostPredictor
    config: LowLevelConfig = LowLevelConfig()
    ring: deque = field(default_factory=lambda: deque(maxlen=N_LAGS))
    last: Command | None = None
    hold_left: int = 0
    stale_steps: int = 0
    log_rows: list[list] = field(default_factory=list)

    def observe_supply(self, t_sup: float):
        self.ring.append(float(t_sup))

    def step(self, inputs: LowLevelInputs, timestamp=None) -> Command:
        if inputs.age_seconds > self.config.step_seconds and self.last is not None:
            self.stale_steps += 1
            cmd = replace(self.last, reason=Reason.STALE)
        else:
            cmd = low_level_step(replace(inputs, supply_temps=tuple(self.ring)), self.predictor, self.config)
            if cmd.reason in (Reason.OVER_LIMIT, Reason.DEFROST_STAGE3):
                self.hold_left = self.config.hold_steps
            elif self.hold_left > 0:
                self.hold_left -= 1
                floor = min(self.config.hp_floor, inputs.hl_air_setpoint)
                if cmd.hp_setpoint > floor:
                    cmd = replace(cmd, hp_setpoint=floor, reason=Reason.HOLD if cmd.reason is Reason.NONE else cmd.reason)
        self.last = cmd
        if timestamp is not None:
            self.log_rows.append([timestamp, int(cmd.wh_enabled), cmd.wh_setpoint, cmd.hp_setpoint, cmd.reason.value])
        return cmd

    def write_log(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(_LOG_HEADER)
            wr.writerows(self.log_rows)
