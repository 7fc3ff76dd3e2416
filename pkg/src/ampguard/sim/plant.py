"""Plant truth: a 2R1C house with a modulating heat pump, staged backup,
frost/defrost cycles, a resistance water heater and an EV charger.

The plant is deliberately richer than the controller's model: the interior
mass temperature moves, the heat pump's own thermostat decides when backup
stages engage, and defrost cycles interrupt heating.  All capacitors are
integrated with explicit Euler steps so the energy balance of each step is
exact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from ..devices import EvModel, HeatPumpModel, WaterHeaterModel, cop, ev_step
from ..lowlevel import LowLevelConfig, defrost_stage

STEP_HOURS = 30.0 / 3600.0


class HpMode(str, enum.Enum):
    OFF = "off"
    HEATING = "heating"
    DEFROST = "defrost"


@dataclass(frozen=True)
class PlantConfig:
    r_out: float = 3.0
    r_m: float = 1.3
    c_air: float = 0.87  # kWh/degC; with r_out, r_m gives a ~ 0.9 at 5 minutes
    c_mass: float = 12.0
    gamma: float = 0.3  # the device thermostat settles this far below set-point
    kp: float = 6.0  # kW per degC
    ti_hours: float = 0.33
    solar_gain: float = 0.004  # kW per W/m2
    internal_gain: float = 0.4
    wind_loss: float = 0.01  # kW per (m/s * degC / 10)
    # backup staging thresholds on set-point error, degC
    stage2_error: float = 0.8
    stage3_error: float = 1.4
    stage4_error: float = 2.0
    saturation_minutes: float = 10.0
    min_stage_minutes: float = 2.0
    # frost and defrost
    frost_below: float = 4.0
    frost_rate: float = 1.0 / 90.0  # per compressor-minute at the peak
    frost_peak: float = -5.0
    frost_floor: float = 0.2  # relative accrual in very dry, very cold air
    frost_dry_span: float = 12.0  # degC below the peak over which accrual falls to the floor
    frost_cross: float = 0.97  # supply air falls to return air at this index
    defrost_minutes: float = 10.0
    defrost_extract_kw: float = 2.0
    supply_rise: float = 10.0
    legacy_defrost: bool = False
    # water heater
    wh_deadband: float = 1.0
    hp: HeatPumpModel = HeatPumpModel()
    wh: WaterHeaterModel = WaterHeaterModel()
    staging: LowLevelConfig = LowLevelConfig()

    def frost_accrual(self, t_out: float) -> float:
        """Frost index gained per compressor-minute at ``t_out``."""
        if t_out >= self.frost_below:
            return 0.0
        if t_out >= self.frost_peak:
            rel = (self.frost_below - t_out) / (self.frost_below - self.frost_peak)
        else:
            rel = max(self.frost_floor, 1.0 - (self.frost_peak - t_out) / self.frost_dry_span)
        return self.frost_rate * min(1.0, rel)


@dataclass(frozen=True)
class PlantCommand:
    hp_setpoint: float
    wh_enabled: bool = True
    wh_setpoint: float = 48.9
    ev_on: bool = False


@dataclass(frozen=True)
class PlantState:
    t_in: float = 20.5
    t_mass: float = 20.5
    t_w: float = 50.0
    ev: EvModel | None = None
    frost_index: float = 0.0
    hp_mode: HpMode = HpMode.OFF
    backup_stage: int = 0
    supply_temp: float = 20.5
    # device-internal controller state
    integral: float = 0.0
    saturated_minutes: float = 0.0
    stage_minutes: float = 0.0
    defrost_left: float = 0.0
    wh_on: bool = False
    # flows over the step that produced this state
    q_hp: float = 0.0  # thermal power into the air from compressor and backup, kW
    i_hp: float = 0.0
    i_wh: float = 0.0
    i_ev: float = 0.0
    i_unc: float = 0.0
    w: float = 0.0
    draw_kw: float = 0.0
    ev_on: bool = False

    def __post_init__(self):
        if self.frost_index < 0:
            raise ValueError("frost index must be non-negative")

    @property
    def i_total(self) -> float:
        return self.i_hp + self.i_wh + self.i_ev + self.i_unc


def exogenous_power(state: PlantState, t_out: float, wind: float, ghi: float, cfg: PlantConfig,
                    extra: float = 0.0) -> float:
    """Heat gains other than the heat pump: sun, people and plug loads, wind."""
    infiltration = cfg.wind_loss * wind * max(0.0, state.t_in - t_out) / 10.0
    return cfg.internal_gain + cfg.solar_gain * ghi - infiltration + extra


def _thermostat(state: PlantState, setpoint: float, eta: float, cfg: PlantConfig, minutes: float):
    """Compressor output and backup stage chosen by the heat pump's own controller."""
    hp = cfg.hp
    err = setpoint - cfg.gamma - state.t_in
    q_lo, q_hi = eta * hp.p_min, eta * hp.p_max
    integral = state.integral + cfg.kp * err * minutes / 60.0 / cfg.ti_hours
    integral = min(max(integral, 0.0), q_hi)
    demand = cfg.kp * err + integral
    compressor_on = state.hp_mode is HpMode.HEATING
    if demand >= q_lo:
        q = min(demand, q_hi)
    elif compressor_on and err > -0.3:
        q = q_lo
    else:
        q = 0.0
    saturated = state.saturated_minutes + minutes if (q >= q_hi and err > 0.3) else 0.0

    want = 0
    if err >= cfg.stage4_error:
        want = 4
    elif err >= cfg.stage3_error:
        want = 3
    elif err >= cfg.stage2_error or saturated >= cfg.saturation_minutes:
        want = 2
    stage, held = state.backup_stage, state.stage_minutes + minutes
    if want > stage:
        stage, held = want, 0.0
    elif stage > 0 and err <= 0.0 and held >= cfg.min_stage_minutes:
        stage, held = 0, 0.0
    return q, stage, integral, saturated, held


def plant_step(state: PlantState, command: PlantCommand, t_out: float, wind: float, ghi: float,
               draw_kw: float, uncontrolled_current: float, cfg: PlantConfig = PlantConfig(),
               dt: float = STEP_HOURS, w_extra: float = 0.0, supply_noise: float = 0.0) -> PlantState:
    """Advance the plant by ``dt`` hours under piecewise-constant inputs."""
    hp = cfg.hp
    minutes = dt * 60.0
    eta = cop(hp, t_out)
    v = hp.voltage

    frost = state.frost_index
    defrost_left = state.defrost_left
    integral, saturated, held = state.integral, state.saturated_minutes, state.stage_minutes
    if state.hp_mode is HpMode.DEFROST and defrost_left > 0:
        mode = HpMode.DEFROST
        if cfg.legacy_defrost:
            stage = 4 if t_out < cfg.staging.stage2_above else 3
        else:
            stage = defrost_stage(t_out, cfg.staging)
        q_comp = -cfg.defrost_extract_kw
        p_comp = hp.p_min
        defrost_left -= minutes
        supply = state.t_in - 5.0
        if defrost_left <= 1e-9:
            mode, defrost_left, frost, stage, held = HpMode.HEATING, 0.0, 0.0, 0, 0.0
    else:
        q_comp, stage, integral, saturated, held = _thermostat(state, command.hp_setpoint, eta, cfg, minutes)
        mode = HpMode.HEATING if q_comp > 0 else HpMode.OFF
        p_comp = q_comp / eta
        if mode is HpMode.HEATING:
            frost += cfg.frost_accrual(t_out) * minutes
            rise = cfg.supply_rise * (0.6 + 0.4 * q_comp / (eta * hp.p_max))
            supply = state.t_in + rise * (1.0 - frost / cfg.frost_cross) + supply_noise
            if frost >= 1.0:
                mode, defrost_left = HpMode.DEFROST, cfg.defrost_minutes
        else:
            supply = state.t_in + supply_noise

    p_backup = stage * hp.p_backup_max / 4.0
    q_total = q_comp + p_backup
    i_hp = (p_comp / hp.power_factor + p_backup) * 1000.0 / v

    # envelope: explicit Euler on air and interior mass
    w = exogenous_power(state, t_out, wind, ghi, cfg, w_extra)
    flow_out = (state.t_in - t_out) / cfg.r_out
    flow_mass = (state.t_in - state.t_mass) / cfg.r_m
    t_in = state.t_in + dt * (q_total + w - flow_out - flow_mass) / cfg.c_air
    t_mass = state.t_mass + dt * flow_mass / cfg.c_mass

    # water heater: element thermostat with a small dead-band
    wh = cfg.wh
    on = state.wh_on
    if not command.wh_enabled or state.t_w >= command.wh_setpoint:
        on = False
    elif state.t_w <= command.wh_setpoint - cfg.wh_deadband:
        on = True
    p_el = wh.p_w if on else 0.0
    loss = (state.t_w - wh.t_ambient) / wh.r_w
    t_w = state.t_w + dt * (p_el - draw_kw - loss) / wh.c_w
    i_wh = p_el * 1000.0 / v

    ev, i_ev, ev_on = state.ev, 0.0, False
    if ev is not None and command.ev_on and ev.soc < ev.capacity - 1e-9:
        ev_on = True
        i_ev = ev.current
        ev = ev_step(ev, True, dt)

    return replace(
        state, t_in=t_in, t_mass=t_mass, t_w=t_w, ev=ev, frost_index=frost, hp_mode=mode,
        backup_stage=stage, supply_temp=supply, integral=integral, saturated_minutes=saturated,
        stage_minutes=held, defrost_left=defrost_left, wh_on=on, q_hp=q_total, i_hp=i_hp,
        i_wh=i_wh, i_ev=i_ev, i_unc=float(uncontrolled_current), w=w, draw_kw=draw_kw, ev_on=ev_on,
    )


def energy_residual(before: PlantState, after: PlantState, t_out: float, cfg: PlantConfig,
                    dt: float = STEP_HOURS) -> float:
    """Stored-energy change minus net inflow over one step, kWh (zero up to rounding)."""
    d_air = cfg.c_air * (after.t_in - before.t_in)
    d_mass = cfg.c_mass * (after.t_mass - before.t_mass)
    inflow = after.q_hp + after.w - (before.t_in - t_out) / cfg.r_out
    return d_air + d_mass - dt * inflow


def defrost_interval_minutes(t_out: float, cfg: PlantConfig = PlantConfig()) -> float:
    """Compressor-minutes between defrosts under continuous heating."""
    rate = cfg.frost_accrual(t_out)
    return math.inf if rate == 0 else 1.0 / rate


def defrost_trigger(state: PlantState) -> bool:
    """True when accumulated frost forces a defrost cycle to start."""
    return state.hp_mode is HpMode.HEATING and state.frost_index >= 1.0
