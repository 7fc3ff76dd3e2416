"""Heat pump, water heater, EV charger and main-breaker models."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .thermal import DT_DEFAULT, discretize

VOLTAGE = 240.0

# synthetic manufacturer-style COP table: (outdoor degC, COP)
COP_TABLE = ((-20.0, 1.6), (-10.0, 2.0), (0.0, 2.5), (10.0, 3.2))


def fit_cop(table: Sequence[tuple[float, float]] = COP_TABLE) -> tuple[float, float, float]:
    """Least-squares quadratic through (t_out, cop) points, highest power first."""
    t, y = np.asarray(table, dtype=float).T
    return tuple(float(v) for v in np.polyfit(t, y, 2))


_DEFAULT_COP = fit_cop()


@dataclass(frozen=True)
class HeatPumpModel:
    cop_coeffs: tuple[float, float, float] = _DEFAULT_COP
    p_min: float = 2.5
    p_max: float = 3.9
    p_backup_max: float = 19.2
    power_factor: float = 0.8
    voltage: float = VOLTAGE
    t_range: tuple[float, float] = (-25.0, 20.0)
    stage_codes: tuple[int, ...] = (0, 2, 3, 4)

    def __post_init__(self):
        if not 0 < self.p_min <= self.p_max:
            raise ValueError("need 0 < p_min <= p_max")
        if not 0 < self.power_factor <= 1:
            raise ValueError("power factor must lie in (0, 1]")

    def stage_power(self, code: int) -> float:
        """Backup resistance power (kW) for a stage code in {0, 2, 3, 4}."""
        if code not in self.stage_codes:
            raise ValueError(f"stage code must be one of {self.stage_codes}, got {code}")
        return code * self.p_backup_max / 4.0


def cop(model: HeatPumpModel, t_out: float) -> float:
    """Quadratic COP in outdoor temperature, clipped to the fitted range and floored at 1."""
    lo, hi = model.t_range
    t = min(max(t_out, lo), hi)
    return max(1.0, float(np.polyval(model.cop_coeffs, t)))


def cop_in_range(model: HeatPumpModel, t_out: float) -> bool:
    lo, hi = model.t_range
    return lo <= t_out <= hi


def hp_current(q_thermal: float, eta: float, stage_code: int, model: HeatPumpModel = HeatPumpModel()) -> float:
    """Line current (A): compressor at power factor f, resistance backup at unity."""
    if q_thermal < 0:
        raise ValueError("thermal output must be non-negative")
    compressor_kw = q_thermal / (eta * model.power_factor) if q_thermal else 0.0
    return (compressor_kw + model.stage_power(stage_code)) * 1000.0 / model.voltage


@dataclass(frozen=True)
class WaterHeaterModel:
    c_w: float = 0.197
    r_w: float = 1476.0
    t_ambient: float = 19.0
    p_w: float = 4.5
    voltage: float = VOLTAGE
    dt: float = DT_DEFAULT

    @property
    def a_w(self) -> float:
        return discretize(self.r_w, self.c_w, self.dt)

    @property
    def current(self) -> float:
        return self.p_w * 1000.0 / self.voltage

    def with_dt(self, dt: float) -> "WaterHeaterModel":
        return replace(self, dt=dt)


def wh_step(t_w: float, element_on: bool, w_draw: float, model: WaterHeaterModel = WaterHeaterModel()) -> float:
    """Tank temperature one step ahead under element state and draw heat rate (kW)."""
    a = model.a_w
    p = model.p_w if element_on else 0.0
    return a * t_w + (1.0 - a) * (model.t_ambient + model.r_w * (p - w_draw))


def draw_heat_rate(flow_lpm: float, t_w: float, t_mains: float = 8.0) -> float:
    """Heat (kW) carried out of the tank by a hot-water flow in litres/minute."""
    # 4.186 kJ/(kg K), 1 kg/L
    return max(0.0, flow_lpm) / 60.0 * 4.186 * max(0.0, t_w - t_mains)


@dataclass(frozen=True)
class EvModel:
    capacity: float = 70.0
    charge_power: float = 11.5
    soc: float = 42.0
    max_switches: int = 16
    efficiency: float = 1.0
    departure_hour: float = 7.0
    voltage: float = VOLTAGE

    def __post_init__(self):
        if not 0 <= self.soc <= self.capacity + 1e-9:
            raise ValueError(f"soc {self.soc} outside [0, {self.capacity}]")

    @property
    def current(self) -> float:
        return self.charge_power * 1000.0 / self.voltage

    def energy_needed(self) -> float:
        return max(0.0, self.capacity - self.soc)

    def steps_needed(self, dt: float) -> int:
        return math.ceil(self.energy_needed() / (self.charge_power * self.efficiency * dt) - 1e-9)


def ev_step(ev: EvModel, on: bool, dt: float, trip_energy: float = 0.0) -> EvModel:
    soc = ev.soc + (ev.charge_power * ev.efficiency * dt if on else 0.0)
    soc = min(ev.capacity, soc) - trip_energy
    return replace(ev, soc=max(0.0, soc))


class Zone(enum.IntEnum):
    NORMAL = 0
    UNDESIRABLE = 1
    UNSAFE = 2
    TRIP_LIKELY = 3


@dataclass(frozen=True)
class TripCurve:
    """Time-current envelope of the main breaker.

    ``boundaries`` lists (multiple of rated, minutes a current above that
    multiple may persist) with multiples increasing and durations decreasing.
    Exceeding a boundary's duration is classed as trip-likely.
    """

    rated: float = 100.0
    undesirable_from: float = 0.9
    boundaries: tuple[tuple[float, float], ...] = ((1.0, 5.0), (1.15, 0.0))
    magnetic_multiple: float = 5.0

    def __post_init__(self):
        mult = [b[0] for b in self.boundaries]
        dur = [b[1] for b in self.boundaries]
        if mult != sorted(mult) or dur != sorted(dur, reverse=True):
            raise ValueError("trip-curve boundaries must be monotone")

    @property
    def magnetic_threshold(self) -> float:
        return self.magnetic_multiple * self.rated


@dataclass(frozen=True)
class ZoneVerdict:
    zone: Zone
    trip: bool = False
    magnetic: bool = False


def breaker_zone(current: float, sustained_minutes: float = 0.0, curve: TripCurve = TripCurve()) -> ZoneVerdict:
    """Classify a current that has been held for ``sustained_minutes``."""
    if current < 0:
        raise ValueError("current must be non-negative")
    if current >= curve.magnetic_threshold:
        return ZoneVerdict(Zone.TRIP_LIKELY, trip=True, magnetic=True)
    ratio = current / curve.rated
    zone = Zone.NORMAL
    if ratio >= curve.undesirable_from:
        zone = Zone.UNDESIRABLE
    for mult, minutes in curve.boundaries:
        if ratio > mult:
            zone = Zone.UNSAFE if sustained_minutes <= minutes and minutes > 0 else Zone.TRIP_LIKELY
    return ZoneVerdict(zone, trip=zone is Zone.TRIP_LIKELY)


@dataclass
class ZoneTracker:
    """Feeds a current series through :func:`breaker_zone`, tracking how long
    each boundary has been exceeded."""

    curve: TripCurve = TripCurve()
    step_minutes: float = 5.0
    _above: dict[float, float] = field(default_factory=dict)

    def update(self, current: float) -> ZoneVerdict:
        ratio = current / self.curve.rated
        worst = breaker_zone(current, 0.0, self.curve)
        for mult, _ in self.curve.boundaries:
            if ratio > mult:
                self._above[mult] = self._above.get(mult, 0.0) + self.step_minutes
            else:
                self._above[mult] = 0.0
        for mult, _ in self.curve.boundaries:
            if ratio > mult:
                v = breaker_zone(current, self._above[mult], self.curve)
                if v.zone > worst.zone:
                    worst = v
        return worst
