"""Closed-loop simulation: plant, controllers, and command delivery.

The plant advances every 30 s.  The baseline controller follows a fixed
set-point schedule.  The MPC stack re-plans every 5 minutes and its
set-points reach the 30-second safety layer through a mailbox that can be
delayed or dropped to emulate communication faults.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from ..devices import EvModel, draw_heat_rate
from ..forecast import (ExogForecastModel, UncontrolledProfile, WaterDrawHistory, full_forecast,
                        water_scenarios, weather_features)
from ..lowlevel import (DefrostPredictor, LowLevelConfig, LowLevelController, LowLevelInputs, Reason,
                        predict_defrost)
from ..mpc import (EvInfeasible, MpcConfig, build_problem, current_chance_terms, horizon_inputs,
                   indoor_preference, solve as mpc_solve)
from ..thermal import ThermalParams, TrackingParams, effective_boundary_temp, invert_for_w
from .occupants import DrawLibrary, OccupantModel, STEPS_PER_DAY
from .plant import HpMode, PlantCommand, PlantConfig, PlantState, STEP_HOURS, plant_step
from .trace import Trace
from .weather import WeatherTrace, cold_snap

log = logging.getLogger(__name__)

HL_EVERY = 10  # plant steps per 5-minute planning step


@dataclass(frozen=True)
class EvScenario:
    """An EV that plugs in every evening and must be full by morning."""

    model: EvModel = EvModel()
    arrive_hour: float = 17.0
    depart_hour: float = 7.0
    soc_on_arrival: float = 42.0

    def plugged(self, hour: float) -> bool:
        return hour >= self.arrive_hour or hour < self.depart_hour


@dataclass(frozen=True)
class MpcStackConfig:
    k: int = 36
    s: int = 4
    method: str = "dive"
    backend: str = "highs"
    gap_tol: float = 0.01
    time_limit: float = 10.0
    ev_margin_steps: int = 6
    ev_switch_reserve: int = 4
    ev_future_share: float = 0.7
    ev_soc_value: float = 0.5
    ev_switch_price: float = 1.0
    ev_pause_current: float = 100.0  # the safety layer pauses charging above this
    stage_headroom: tuple[float, float] | None = (1.0, 0.3)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    days: int = 31
    controller: str = "baseline"
    weather: WeatherTrace | None = None
    occupants: int = 2
    library_seed: int = 7
    delay_prob: float = 0.0
    delay_seed: int = 0
    max_delay_steps: int = 6
    drop_fraction: float = 0.25
    baseline_wh_setpoint: float = 48.9
    air_schedule: np.ndarray | None = None  # baseline air set-point per 5-minute step
    ev: EvScenario | None = None
    plant: PlantConfig = PlantConfig()
    # None: the baseline runs the factory defrost staging, the MPC stack the
    # reconfigured thresholds
    legacy_defrost: bool | None = None
    lowlevel: LowLevelConfig = LowLevelConfig()
    mpc: MpcStackConfig = MpcStackConfig()
    initial: PlantState = PlantState()

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("simulate at least one day")
        if self.controller not in ("baseline", "mpc"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if not 0 <= self.delay_prob <= 1:
            raise ValueError("delay probability must lie in [0, 1]")

    def weather_trace(self) -> WeatherTrace:
        w = self.weather if self.weather is not None else cold_snap(max(self.days, 31))
        if w.days < self.days:
            raise ValueError(f"weather covers {w.days:.1f} days, need {self.days}")
        return w


@dataclass(frozen=True)
class ControllerArtifacts:
    """Everything the MPC stack learns from history before going live."""

    params: ThermalParams
    exog: ExogForecastModel
    profile: UncontrolledProfile
    water: WaterDrawHistory
    predictor: DefrostPredictor
    tracking: TrackingParams = TrackingParams()


@dataclass
class _Mailbox:
    pending: list = field(default_factory=list)  # (deliver_step, payload)
    current: tuple | None = None
    age_steps: int = 0

    def post(self, step: int, payload: tuple):
        self.pending.append((step, payload))

    def deliver(self, step: int):
        due = [p for p in self.pending if p[0] <= step]
        if due:
            self.pending = [p for p in self.pending if p[0] > step]
            self.current = due[-1][1]
            self.age_steps = 0
        else:
            self.age_steps += 1


class _Planner:
    """The 5-minute MPC loop with its forecast state."""

    def __init__(self, cfg: SimConfig, art: ControllerArtifacts, weather: WeatherTrace, start: datetime):
        self.cfg, self.art, self.weather = cfg, art, weather
        self.mpc_cfg = MpcConfig.from_thermal(art.params, k=cfg.mpc.k, s=cfg.mpc.s, tracking=art.tracking,
                                              hp=cfg.plant.hp, wh=cfg.plant.wh,
                                              stage_headroom=cfg.mpc.stage_headroom,
                                              ev_future_share=cfg.mpc.ev_future_share,
                                              ev_soc_value=cfg.mpc.ev_soc_value,
                                              ev_switch_price=cfg.mpc.ev_switch_price)
        n_hist = art.water.values.size
        # treat the fitted history as the hours immediately before the run
        self.water = WaterDrawHistory(start - timedelta(hours=n_hist), art.water.values.copy(),
                                      art.water.retention_days)
        self.errors: list[float] = []
        self.ol = art.exog.open_loop.predict(weather_features(weather.points(0, len(weather))))
        self.last = None
        self.solve_seconds: list[float] = []
        self.gaps: list[float] = []

    def record_interval(self, j: int, t0: float, t1: float, q_mean: float, t_out_mean: float):
        theta = effective_boundary_temp(t_out_mean, self.art.params)
        w = invert_for_w(t0, t1, theta, q_mean, self.art.params)
        self.errors.append(float(w - self.ol[min(j, self.ol.size - 1)]))
        if len(self.errors) > 64:
            self.errors = self.errors[-64:]

    def _solve(self, prob):
        m = self.cfg.mpc
        return mpc_solve(prob, gap_tol=m.gap_tol, time_limit=m.time_limit, backend=m.backend, method=m.method)

    def plan(self, now: datetime, i5: int, state: PlantState, ev_ctx: dict | None, events: list[str]):
        K, S = self.cfg.mpc.k, self.cfg.mpc.s
        idx = np.minimum(np.arange(i5, i5 + K), len(self.weather) - 1)
        pts = [self.weather.point(int(i)) for i in idx]
        t_out = self.weather.t_out[idx]
        fc = full_forecast(self.art.exog, self.errors, pts)
        ww = water_scenarios(self.water, now, S, K).scenarios
        hour = now.hour + now.minute / 60.0
        inputs = horizon_inputs(hour, t_out, fc.values, ww, self.art.params, self.cfg.plant.hp,
                                sigma=self.art.exog.sigmas(),
                                q_alpha=current_chance_terms(self.art.profile, (hour + np.arange(K) / 12.0) % 24))
        kw = {}
        forced_ev = False
        if ev_ctx is not None:
            kw = dict(ev=ev_ctx["model"], ev_available=ev_ctx["available"], ev_deadline=ev_ctx["deadline"],
                      ev_on_now=ev_ctx["on_now"], ev_switch_budget=ev_ctx["budget"])
        try:
            prob = build_problem(state.t_in, state.t_w, inputs, self.mpc_cfg, **kw)
        except EvInfeasible as exc:
            events.append(f"{now.isoformat()} ev-infeasible {exc}")
            prob = build_problem(state.t_in, state.t_w, inputs, self.mpc_cfg)
            forced_ev = True  # the deadline is out of reach: charge flat out
        sol = self._solve(prob)
        if not hasattr(sol, "air_setpoint") and prob.ev is not None:
            events.append(f"{now.isoformat()} ev-plan-failure {sol.status.value}; charging without a plan")
            sol = self._solve(build_problem(state.t_in, state.t_w, inputs, self.mpc_cfg))
            forced_ev = True
        if not hasattr(sol, "air_setpoint"):
            events.append(f"{now.isoformat()} solver-failure {sol.status.value}; holding set-points")
            return self.last
        self.solve_seconds.append(sol.solve_seconds)
        self.gaps.append(sol.gap)
        ev_on = forced_ev or bool(sol.ev_on)
        self.last = (sol.air_setpoint, sol.water_setpoint, ev_on)
        return self.last


def run_closed_loop(config: SimConfig, artifacts: ControllerArtifacts | None = None,
                    monitor: DefrostPredictor | None = None) -> Trace:
    """Simulate ``config.days`` days and return the 30-second trace.

    ``monitor`` adds a defrost predictor in observe-only mode (useful for the
    baseline controller, which has no safety layer).
    """
    cfg = config
    if cfg.controller == "mpc" and artifacts is None:
        raise ValueError("the MPC stack needs fitted controller artifacts")
    weather = cfg.weather_trace()
    start = weather.start
    n = cfg.days * STEPS_PER_DAY
    per_w = int(round(weather.step_minutes * 2))

    root = np.random.SeedSequence(cfg.seed)
    occ_rng, noise_rng = (np.random.default_rng(s) for s in root.spawn(2))
    delay_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, cfg.delay_seed, 7919]))
    occupants = OccupantModel(DrawLibrary.generate(cfg.library_seed), cfg.occupants)
    flows, amps = occupants.days(occ_rng, cfg.days)
    # slowly varying unmodelled heat gains
    phi = math.exp(-STEP_HOURS / 2.0)
    shocks = noise_rng.normal(0.0, 0.25 * math.sqrt(1 - phi ** 2), n)
    supply_noise = noise_rng.normal(0.0, 0.05, n)

    legacy = cfg.controller == "baseline" if cfg.legacy_defrost is None else cfg.legacy_defrost
    plant_cfg = replace(cfg.plant, legacy_defrost=legacy)
    state = cfg.initial
    if cfg.ev is not None:
        state = replace(state, ev=replace(cfg.ev.model, soc=cfg.ev.model.capacity))

    predictor = artifacts.predictor if artifacts is not None else monitor
    ll = LowLevelController(predictor, cfg.lowlevel) if (cfg.controller == "mpc" or monitor is not None) else None
    planner = _Planner(cfg, artifacts, weather, start) if cfg.controller == "mpc" else None
    box = _Mailbox()

    cols = {name: np.zeros(n) for name in ("t_out", "t_in", "t_w", "i_total", "i_hp", "i_wh", "i_ev",
                                           "i_uncontrolled", "setpoint_air", "setpoint_water")}
    ints = {name: np.zeros(n, dtype=int) for name in ("backup_stage", "wh_on", "ev_on")}
    mode = np.empty(n, dtype=object)
    reason = np.empty(n, dtype=object)
    extras = {"defrost_alarm": np.zeros(n, dtype=bool), "supply_temp": np.zeros(n), "ev_soc": np.zeros(n),
              "draw_kw": np.zeros(n), "delayed": np.zeros(n, dtype=bool), "t_mass": np.zeros(n), "q_hp": np.zeros(n),
              "plan_air": np.zeros(n), "plan_water": np.zeros(n)}
    events: list[str] = []

    w_extra = 0.0
    q_acc = t_out_acc = draw_hour = 0.0
    t_prev = state.t_in
    ev_switches = 0
    ev_was_on = False
    last_plugged = False
    air_sp = indoor_preference(start.hour)
    water_sp = cfg.baseline_wh_setpoint
    ev_cmd = False
    ev_paused = False

    for step in range(n):
        now = start + timedelta(seconds=30 * step)
        hour = now.hour + now.minute / 60.0 + now.second / 3600.0
        wi = min(step // per_w, len(weather) - 1)
        t_out, wind, ghi = float(weather.t_out[wi]), float(weather.wind[wi]), float(weather.ghi[wi])

        plugged = cfg.ev is not None and cfg.ev.plugged(hour)
        if cfg.ev is not None and plugged and not last_plugged:
            state = replace(state, ev=replace(state.ev, soc=min(state.ev.soc, cfg.ev.soc_on_arrival)))
            ev_switches = 0
        last_plugged = plugged

        if step % HL_EVERY == 0:
            ev_paused = False
            if step > 0 and planner is not None:
                planner.record_interval(step // HL_EVERY - 1, t_prev, state.t_in, q_acc / HL_EVERY,
                                        t_out_acc / HL_EVERY)
            t_prev, q_acc, t_out_acc = state.t_in, 0.0, 0.0
            if step % 120 == 0 and step > 0 and planner is not None:
                planner.water.append(draw_hour / 120.0)
                draw_hour = 0.0
            if cfg.controller == "baseline":
                if cfg.air_schedule is not None:
                    air_sp = float(cfg.air_schedule[min(step // HL_EVERY, len(cfg.air_schedule) - 1)])
                else:
                    air_sp = indoor_preference(hour)
                water_sp = cfg.baseline_wh_setpoint
                ev_cmd = plugged
            else:
                ev_ctx = None
                if plugged and state.ev.soc < state.ev.capacity - 1e-6:
                    ev_ctx = _ev_context(cfg, state, now, ev_was_on, ev_switches)
                plan = planner.plan(now, step // HL_EVERY, state, ev_ctx, events)
                if plan is None:
                    plan = (indoor_preference(hour), cfg.baseline_wh_setpoint, plugged)
                if delay_rng.random() < cfg.delay_prob:
                    if delay_rng.random() < cfg.drop_fraction:
                        events.append(f"{now.isoformat()} command dropped")
                    else:
                        lag = int(delay_rng.integers(1, cfg.max_delay_steps + 1))
                        box.post(step + lag, plan)
                        events.append(f"{now.isoformat()} command delayed {lag * 30} s")
                else:
                    box.post(step, plan)

        if cfg.controller == "mpc":
            box.deliver(step)
            if box.current is not None:
                air_sp, water_sp, ev_cmd = box.current
            extras["delayed"][step] = bool(box.pending)

        flow = flows[step]
        draw_kw = draw_heat_rate(flow, state.t_w)
        hp_on = state.hp_mode is HpMode.HEATING
        alarm = False
        reason_now = Reason.NONE.value
        wh_enabled, wh_sp, hp_sp = True, water_sp, air_sp
        if ll is not None:
            ll.observe_supply(state.supply_temp)
            inputs = LowLevelInputs(
                whole_home_current=state.i_total, backup_stage=state.backup_stage,
                water_flow_active=draw_kw >= cfg.lowlevel.significant_draw_kw, t_w=state.t_w,
                supply_temps=(), return_temp=state.t_in, hp_on=hp_on, t_out=t_out,
                hl_air_setpoint=air_sp, hl_water_setpoint=water_sp)
            cmd = ll.step(inputs)
            alarm = predict_defrost(ll.predictor, replace(inputs, supply_temps=tuple(ll.ring)), cfg.lowlevel)[0]
            if cfg.controller == "mpc":
                wh_enabled, wh_sp, hp_sp = cmd.wh_enabled, cmd.wh_setpoint, cmd.hp_setpoint
                reason_now = cmd.reason.value
                # The safety layer also pauses the charger ahead of a defrost, on
                # unplanned backup heat or above the breaker rating.  The pause
                # lasts until the next plan so the charger does not chatter.
                if (cmd.reason in (Reason.DEFROST, Reason.DEFROST_STAGE3, Reason.UNEXPECTED_BACKUP)
                        or state.i_total > cfg.mpc.ev_pause_current):
                    ev_paused = True
        ev_on = bool(ev_cmd and not ev_paused and plugged)

        w_extra = phi * w_extra + shocks[step]
        state = plant_step(state, PlantCommand(hp_sp, wh_enabled, wh_sp, ev_on), t_out, wind, ghi, draw_kw,
                           float(amps[step]), plant_cfg, w_extra=w_extra, supply_noise=float(supply_noise[step]))
        if state.ev_on != ev_was_on and plugged:
            ev_switches += 1
        ev_was_on = state.ev_on
        q_acc += state.q_hp
        t_out_acc += t_out
        draw_hour += draw_kw

        cols["t_out"][step] = t_out
        cols["t_in"][step] = state.t_in
        cols["t_w"][step] = state.t_w
        cols["i_hp"][step] = state.i_hp
        cols["i_wh"][step] = state.i_wh
        cols["i_ev"][step] = state.i_ev
        cols["i_uncontrolled"][step] = state.i_unc
        cols["i_total"][step] = state.i_hp + state.i_wh + state.i_ev + state.i_unc
        cols["setpoint_air"][step] = hp_sp
        cols["setpoint_water"][step] = wh_sp
        ints["backup_stage"][step] = state.backup_stage
        ints["wh_on"][step] = int(state.wh_on)
        ints["ev_on"][step] = int(state.ev_on)
        mode[step] = state.hp_mode.value
        reason[step] = reason_now
        extras["defrost_alarm"][step] = alarm
        extras["supply_temp"][step] = state.supply_temp
        extras["ev_soc"][step] = state.ev.soc if state.ev is not None else 0.0
        extras["draw_kw"][step] = draw_kw
        extras["t_mass"][step] = state.t_mass
        extras["q_hp"][step] = state.q_hp
        extras["plan_air"][step] = air_sp
        extras["plan_water"][step] = water_sp

    columns = {**cols, **ints, "hp_mode": mode, "override_reason": reason}
    trace = Trace(start, 30.0, columns, events, extras)
    if planner is not None:
        trace.extras["solve_seconds"] = np.array(planner.solve_seconds)
        trace.extras["gaps"] = np.array(planner.gaps)
    return trace


def _ev_context(cfg: SimConfig, state: PlantState, now: datetime, on_now: bool, switches: int) -> dict:
    K = cfg.mpc.k
    ev = state.ev
    hours = [(now + timedelta(minutes=5 * k)) for k in range(K + 1)]
    hod = [t.hour + t.minute / 60.0 for t in hours]
    available = [cfg.ev.plugged(h) for h in hod[:K]]
    # steps until departure (first unplugged step)
    deadline = None
    for k, ok in enumerate(available):
        if not ok:
            deadline = k
            break
    if deadline is None:
        depart = now.replace(hour=int(cfg.ev.depart_hour), minute=int(cfg.ev.depart_hour % 1 * 60), second=0)
        if depart <= now:
            depart += timedelta(days=1)
        deadline = int((depart - now).total_seconds() // 300)
    deadline = max(0, deadline - cfg.mpc.ev_margin_steps)
    budget = max(0, ev.max_switches - switches - cfg.mpc.ev_switch_reserve)
    return {"model": ev, "available": available, "deadline": deadline, "on_now": on_now, "budget": budget}
