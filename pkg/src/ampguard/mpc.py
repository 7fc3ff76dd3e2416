"""Scenario-based mixed-integer MPC for a current-limited all-electric home.

At every control step the controller plans heat-pump, backup-heat, water-heater
(and optionally EV charger) actions over ``K`` steps for ``S`` water-draw
scenarios at once.  The first actions (indoor set-point and next water
temperature) are shared by all scenarios; later actions may differ.  The
objective trades a heavily priced worst-case excess of whole-home current over
the limit against energy cost and two comfort penalties.  Max and absolute
value terms are written in epigraph form so the whole problem is a MILP.

Per-scenario variable blocks (k = 0..K-1 unless noted):

    T[k], Tw[k]      indoor and tank temperature, k = 0..K
    Ts[k]            indoor set-point
    Q[k]             heat-pump thermal output, kW
    z[k]             heat-pump on/off
    zr[k]            backup stage code in {0, 2, 3, 4}
    zw[k]            water-heater element on/off
    I[k], Iw[k]      heat-pump and water-heater current, A
    ta[k], tw[k]     |Ts - T_pref| and |Tw - Tw_pref| epigraph variables
    sa[k], sw[k]     comfort-bound slacks on T[k+1] and Tw[k+1]

plus one scalar ``v`` bounding the current excess over every (k, s).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .devices import EvModel, HeatPumpModel, WaterHeaterModel
from .forecast import UncontrolledProfile, default_lambda
from .milp import LinearProgram, LpSession, Milp, MilpResult, Status, relative_gap, solve_milp, write_lp
from .thermal import DT_DEFAULT, ThermalParams, TrackingParams

log = logging.getLogger(__name__)

BLOCK = ("T", "Tw", "Ts", "Q", "z", "zr", "zw", "I", "Iw", "ta", "tw", "sa", "sw")
_STATE = {"T", "Tw"}


class MpcConsistencyError(RuntimeError):
    """Scenario plans disagree on an action that must be shared."""


class EvInfeasible(ValueError):
    pass


# ------------------------------------------------------------------- prices
def comfort_price(t_out: float) -> float:
    """Indoor discomfort price ($/degC/h), higher in colder weather."""
    return max(0.0, -0.24 * t_out + 1.2)


def water_price_schedule(hour: float, windows: Sequence[tuple[float, float]] = ((4, 6), (12, 14)),
                         on: tuple[float, float] = (12.0, 54.4),
                         off: tuple[float, float] = (6.0, 48.9)) -> tuple[float, float]:
    """(price $/degC/h, preferred tank degC); windows are half-open [start, end)."""
    h = hour % 24
    return on if any(a <= h < b for a, b in windows) else off


def indoor_preference(hour: float, day: float = 21.0, night: float = 19.5,
                      day_start: float = 6.0, day_end: float = 22.0) -> float:
    h = hour % 24
    return day if day_start <= h < day_end else night


def current_chance_terms(profile: UncontrolledProfile | None, hours: Sequence[float]) -> np.ndarray:
    """Uncontrolled-current allowance q_alpha at each planning step."""
    if profile is None:
        return np.zeros(len(hours))
    return np.array([profile.at(h) for h in hours])


# ------------------------------------------------------------------- config
@dataclass(frozen=True)
class MpcConfig:
    pi_i: float = 1e6
    i_limit: float = 100.0
    dt: float = DT_DEFAULT
    s: int = 8
    k: int = 144
    pi_e: float = 0.14
    t_bounds: tuple[float, float] = (18.5, 23.0)
    tw_bounds: tuple[float, float] = (43.3, 60.0)
    setpoint_bounds: tuple[float, float] = (17.0, 23.0)
    slack_price_air: float = 200.0
    slack_price_water: float = 200.0
    # Optional (base, per stage code) cap on Ts(k) - T(k): keeps the planned
    # set-point step small enough that the device thermostat does not engage
    # more backup than the plan accounts for.  None leaves it out.
    stage_headroom: tuple[float, float] | None = None
    # Share of the charger steps past the horizon the plan may count on when
    # the EV deadline lies beyond it; below 1 moves charging earlier.
    ev_future_share: float = 1.0
    # Credit per kWh held in the EV, averaged over the horizon steps so charge
    # taken early earns more.  Above pi_e it pulls charging into the first
    # steps where the current limit has room.
    ev_soc_value: float = 0.0
    ev_switch_price: float = 0.0  # per charger on/off transition
    a: float = 0.9
    r: float = 0.9
    tracking: TrackingParams = TrackingParams()
    hp: HeatPumpModel = HeatPumpModel()
    wh: WaterHeaterModel = WaterHeaterModel()

    def __post_init__(self):
        if min(self.pi_i, self.pi_e, self.slack_price_air, self.slack_price_water) < 0:
            raise ValueError("prices must be non-negative")
        if self.t_bounds[0] > self.t_bounds[1] or self.tw_bounds[0] > self.tw_bounds[1]:
            raise ValueError("temperature bounds must be ordered")
        if self.k * self.s <= 0:
            raise ValueError("need k >= 1 and s >= 1")
        if min(self.ev_soc_value, self.ev_switch_price) < 0:
            raise ValueError("EV prices must be non-negative")
        if not 0.0 <= self.ev_future_share <= 1.0:
            raise ValueError("ev_future_share must lie in [0, 1]")

    @classmethod
    def from_thermal(cls, params: ThermalParams, **kw) -> "MpcConfig":
        return cls(a=params.a, r=params.r_eff, dt=params.dt, **kw)


@dataclass(frozen=True)
class MpcInputs:
    """Time-varying data over the horizon (length K arrays unless noted)."""

    hours: np.ndarray
    t_out: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    w_hat: np.ndarray
    ww: np.ndarray  # (S, K) water-draw heat rate, kW
    sigma: np.ndarray | None = None
    lam: np.ndarray | None = None
    q_alpha: np.ndarray | None = None
    t_pref: np.ndarray | None = None
    tw_pref: np.ndarray | None = None
    pi_t: np.ndarray | None = None
    pi_w: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.hours)

    def resolved(self) -> "MpcInputs":
        """Fill optional fields with their default schedules."""
        k = self.k
        hrs = np.asarray(self.hours, dtype=float)
        t_out = np.asarray(self.t_out, dtype=float)
        water = [water_price_schedule(h) for h in hrs]
        ww = np.atleast_2d(np.asarray(self.ww, dtype=float))
        out = replace(
            self,
            hours=hrs, t_out=t_out,
            theta=np.asarray(self.theta, float), eta=np.asarray(self.eta, float),
            w_hat=np.asarray(self.w_hat, float), ww=ww,
            sigma=np.zeros(k) if self.sigma is None else np.asarray(self.sigma, float),
            lam=np.array([default_lambda(t) for t in t_out]) if self.lam is None else np.asarray(self.lam, float),
            q_alpha=np.zeros(k) if self.q_alpha is None else np.asarray(self.q_alpha, float),
            t_pref=np.array([indoor_preference(h) for h in hrs]) if self.t_pref is None else np.asarray(self.t_pref, float),
            tw_pref=np.array([p[1] for p in water]) if self.tw_pref is None else np.asarray(self.tw_pref, float),
            pi_t=np.array([comfort_price(t) for t in t_out]) if self.pi_t is None else np.asarray(self.pi_t, float),
            pi_w=np.array([p[0] for p in water]) if self.pi_w is None else np.asarray(self.pi_w, float),
        )
        for name in ("t_out", "theta", "eta", "w_hat", "sigma", "lam", "q_alpha", "t_pref", "tw_pref", "pi_t", "pi_w"):
            if getattr(out, name).shape != (k,):
                raise ValueError(f"input {name} must have length {k}")
        if ww.shape[1] != k:
            raise ValueError(f"water scenarios must span {k} steps")
        if (out.eta <= 0).any():
            raise ValueError("COP must be positive")
        return out

    @property
    def w_pessimistic(self) -> np.ndarray:
        return self.w_hat - self.lam * self.sigma


@dataclass
class EvBlock:
    zev: np.ndarray
    soc: np.ndarray
    d: np.ndarray
    ev: EvModel
    deadline: int
    current: float
    on_now: bool = False
    goal_step: int = 0  # the state of charge must reach goal_kwh by this step
    goal_kwh: float = 0.0
    switch_budget: int = 0


@dataclass
class MpcProblem:
    milp: Milp
    index: dict[str, np.ndarray]  # name -> (S, K) or (S, K+1) variable indices
    v: int
    config: MpcConfig
    inputs: MpcInputs
    t0: float
    tw0: float
    ev: EvBlock | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def s(self) -> int:
        return self.index["T"].shape[0]

    @property
    def k(self) -> int:
        return self.index["Ts"].shape[1]

    @property
    def n(self) -> int:
        return self.milp.lp.n

    def to_lp(self, path: str | Path | None = None) -> str:
        return write_lp(self.milp, path)


class _Builder:
    """Accumulates variables and sparse rows."""

    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.c: list[float] = []
        self.eq: list[tuple[dict[int, float], float]] = []
        self.ub_rows: list[tuple[dict[int, float], float]] = []
        self.domains: dict[int, tuple[float, ...]] = {}

    def var(self, name: str, lo: float = -np.inf, hi: float = np.inf, cost: float = 0.0,
            domain: tuple[float, ...] | None = None) -> int:
        j = len(self.names)
        self.names.append(name)
        self.lb.append(lo)
        self.ub.append(hi)
        self.c.append(cost)
        if domain is not None:
            self.domains[j] = domain
        return j

    def add_eq(self, row: dict[int, float], rhs: float):
        self.eq.append((row, rhs))

    def add_le(self, row: dict[int, float], rhs: float):
        self.ub_rows.append((row, rhs))

    @staticmethod
    def _mat(rows, n):
        data, ri, ci = [], [], []
        for i, (row, _) in enumerate(rows):
            for j, v in row.items():
                ri.append(i)
                ci.append(j)
                data.append(v)
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return A, np.array([r[1] for r in rows], dtype=float)

    def build(self, offset: float = 0.0) -> Milp:
        n = len(self.names)
        A_eq, b_eq = self._mat(self.eq, n)
        A_ub, b_ub = self._mat(self.ub_rows, n)
        lp = LinearProgram(np.array(self.c), A_eq, b_eq, A_ub, b_ub,
                           np.array(self.lb, dtype=float), np.array(self.ub, dtype=float),
                           names=list(self.names), obj_offset=offset)
        return Milp(lp, dict(self.domains))


def build_problem(t0: float, tw0: float, inputs: MpcInputs, config: MpcConfig = MpcConfig(),
                  ev: EvModel | None = None, ev_available: Sequence[bool] | None = None,
                  ev_deadline: int | None = None, ev_on_now: bool = False,
                  ev_switch_budget: int | None = None) -> MpcProblem:
    """Compile the scenario MPC for measured state (t0, tw0) into a MILP."""
    inp = inputs.resolved()
    K, S = inp.k, inp.ww.shape[0]
    if S > 1 and np.ptp(inp.ww[:, 0]) > 0:
        # A shared next tank temperature is only attainable if every scenario
        # sees the same draw over the first step.
        ww = inp.ww.copy()
        ww[:, 0] = ww[:, 0].mean()
        inp = replace(inp, ww=ww)
    cfg = config
    dt = cfg.dt
    a, R = cfg.a, cfg.r
    b, gamma = cfg.tracking.b, cfg.tracking.gamma
    wh = cfg.wh.with_dt(dt)
    aw, Rw, Pw, Ta = wh.a_w, wh.r_w, wh.p_w, wh.t_ambient
    hp = cfg.hp
    pr4 = hp.p_backup_max / 4.0
    V = hp.voltage
    f = hp.power_factor
    w_p = inp.w_pessimistic
    warn: list[str] = []
    lo_t, hi_t = cfg.t_bounds
    lo_w, hi_w = cfg.tw_bounds
    if not lo_t <= t0 <= hi_t:
        warn.append(f"measured indoor temperature {t0:.2f} outside [{lo_t}, {hi_t}]; bounds softened by slack")
    if not lo_w <= tw0 <= hi_w:
        warn.append(f"measured tank temperature {tw0:.2f} outside [{lo_w}, {hi_w}]; bounds softened by slack")
    for msg in warn:
        log.warning(msg)

    B = _Builder()
    wgt = dt / S
    idx = {name: np.zeros((S, K + 1 if name in _STATE else K), dtype=int) for name in BLOCK}
    offset = 0.0
    for s in range(S):
        for k in range(K + 1):
            fixed = k == 0
            idx["T"][s, k] = B.var(f"T_s{s}_k{k}", t0 if fixed else -np.inf, t0 if fixed else np.inf)
        for k in range(K + 1):
            fixed = k == 0
            idx["Tw"][s, k] = B.var(f"Tw_s{s}_k{k}", tw0 if fixed else -np.inf, tw0 if fixed else np.inf)
        for k in range(K):
            idx["Ts"][s, k] = B.var(f"Ts_s{s}_k{k}", *cfg.setpoint_bounds)
            idx["Q"][s, k] = B.var(f"Q_s{s}_k{k}", 0.0, np.inf, wgt * cfg.pi_e / inp.eta[k])
            idx["z"][s, k] = B.var(f"z_s{s}_k{k}", 0.0, 1.0, domain=(0.0, 1.0))
            idx["zr"][s, k] = B.var(f"zr_s{s}_k{k}", 0.0, 4.0, wgt * cfg.pi_e * pr4, domain=(0.0, 2.0, 3.0, 4.0))
            idx["zw"][s, k] = B.var(f"zw_s{s}_k{k}", 0.0, 1.0, wgt * cfg.pi_e * Pw, domain=(0.0, 1.0))
            idx["I"][s, k] = B.var(f"I_s{s}_k{k}", 0.0, np.inf)
            idx["Iw"][s, k] = B.var(f"Iw_s{s}_k{k}", 0.0, np.inf)
            idx["ta"][s, k] = B.var(f"ta_s{s}_k{k}", 0.0, np.inf, wgt * inp.pi_t[k])
            if k == 0:
                # Tw(0) is measured, so its comfort term is a constant
                idx["tw"][s, k] = B.var(f"tw_s{s}_k{k}", 0.0, 0.0)
                offset += wgt * inp.pi_w[0] * abs(tw0 - inp.tw_pref[0])
            else:
                idx["tw"][s, k] = B.var(f"tw_s{s}_k{k}", 0.0, np.inf, wgt * inp.pi_w[k])
            idx["sa"][s, k] = B.var(f"sa_s{s}_k{k}", 0.0, np.inf, wgt * cfg.slack_price_air)
            idx["sw"][s, k] = B.var(f"sw_s{s}_k{k}", 0.0, np.inf, wgt * cfg.slack_price_water)
    v = B.var("v", 0.0, np.inf, cfg.pi_i)

    for s in range(S):
        g = {name: idx[name][s] for name in BLOCK}
        for k in range(K):
            T, T1 = g["T"][k], g["T"][k + 1]
            Tw, Tw1 = g["Tw"][k], g["Tw"][k + 1]
            # indoor dynamics under pessimistic exogenous power
            B.add_eq({T1: 1.0, T: -a, g["Q"][k]: -(1 - a) * R, g["zr"][k]: -(1 - a) * R * pr4},
                     (1 - a) * (inp.theta[k] + R * w_p[k]))
            # device thermostat tracking the set-point
            B.add_eq({T1: 1.0, T: -b, g["Ts"][k]: -(1 - b)}, -(1 - b) * gamma)
            if cfg.stage_headroom is not None:
                base, per_stage = cfg.stage_headroom
                B.add_le({g["Ts"][k]: 1.0, T: -1.0, g["zr"][k]: -per_stage}, base)
            # tank dynamics under this scenario's draws
            B.add_eq({Tw1: 1.0, Tw: -aw, g["zw"][k]: -(1 - aw) * Rw * Pw},
                     (1 - aw) * (Ta - Rw * inp.ww[s, k]))
            # currents
            B.add_eq({g["I"][k]: 1.0, g["Q"][k]: -1000.0 / (V * inp.eta[k] * f), g["zr"][k]: -1000.0 * pr4 / V}, 0.0)
            B.add_eq({g["Iw"][k]: 1.0, g["zw"][k]: -1000.0 * Pw / V}, 0.0)
            # soft comfort bounds on the next states
            B.add_le({T1: -1.0, g["sa"][k]: -1.0}, -lo_t)
            B.add_le({T1: 1.0, g["sa"][k]: -1.0}, hi_t)
            B.add_le({Tw1: -1.0, g["sw"][k]: -1.0}, -lo_w)
            B.add_le({Tw1: 1.0, g["sw"][k]: -1.0}, hi_w)
            # semicontinuous compressor: eta P_min z <= Q <= eta P_max z
            B.add_le({g["Q"][k]: -1.0, g["z"][k]: inp.eta[k] * hp.p_min}, 0.0)
            B.add_le({g["Q"][k]: 1.0, g["z"][k]: -inp.eta[k] * hp.p_max}, 0.0)
            # comfort epigraphs
            B.add_le({g["Ts"][k]: 1.0, g["ta"][k]: -1.0}, inp.t_pref[k])
            B.add_le({g["Ts"][k]: -1.0, g["ta"][k]: -1.0}, -inp.t_pref[k])
            if k > 0:
                B.add_le({Tw: 1.0, g["tw"][k]: -1.0}, inp.tw_pref[k])
                B.add_le({Tw: -1.0, g["tw"][k]: -1.0}, -inp.tw_pref[k])
        if s > 0:
            B.add_eq({g["Ts"][0]: 1.0, idx["Ts"][0, 0]: -1.0}, 0.0)
            B.add_eq({g["Tw"][1]: 1.0, idx["Tw"][0, 1]: -1.0}, 0.0)

    evb = None
    if ev is not None:
        evb = _add_ev_vars(B, ev, K, dt, cfg.pi_e, ev_available, ev_deadline, ev_on_now, ev_switch_budget,
                           cfg.ev_future_share, cfg.ev_soc_value, cfg.ev_switch_price)

    # worst-case current excess: I + Iw (+ I_ev) + q_alpha - v <= limit
    for s in range(S):
        for k in range(K):
            row = {idx["I"][s, k]: 1.0, idx["Iw"][s, k]: 1.0, v: -1.0}
            if evb is not None:
                row[evb.zev[k]] = evb.current
            B.add_le(row, cfg.i_limit - inp.q_alpha[k])

    return MpcProblem(B.build(offset), idx, v, cfg, inp, t0, tw0, evb, warn)


def _add_ev_vars(B: _Builder, ev: EvModel, K: int, dt: float, pi_e: float,
                 available: Sequence[bool] | None, deadline: int | None, on_now: bool,
                 switch_budget: int | None, future_share: float = 1.0, soc_value: float = 0.0,
                 switch_price: float = 0.0) -> EvBlock:
    avail = np.ones(K, dtype=bool) if available is None else np.asarray(available, dtype=bool)
    if avail.size != K:
        raise ValueError("EV availability must cover the horizon")
    per_step = ev.charge_power * ev.efficiency * dt
    need = ev.energy_needed()
    dl = K if deadline is None else int(deadline)
    if dl <= K:
        usable = int(avail[:dl].sum())
        if usable * per_step < need - 1e-9:
            raise EvInfeasible(
                f"EV needs {need:.2f} kWh by step {dl} but only {usable} charging steps are available")
    zev = np.array([B.var(f"zev_k{k}", 0.0, 1.0 if avail[k] else 0.0, pi_e * ev.charge_power * dt,
                          domain=(0.0, 1.0)) for k in range(K)])
    soc = np.array([B.var(f"soc_k{k}", ev.soc if k == 0 else 0.0, ev.soc if k == 0 else ev.capacity,
                          -soc_value / K if k > 0 else 0.0) for k in range(K + 1)])
    for k in range(K):
        # charge delivered is at most one full step; the last step may top off partially
        B.add_le({soc[k + 1]: 1.0, soc[k]: -1.0, zev[k]: -per_step}, 0.0)
        B.add_le({soc[k + 1]: -1.0, soc[k]: 1.0}, 0.0)
    if dl <= K:
        goal_step, goal = dl, ev.capacity
    else:
        # leave no more than the steps beyond the horizon can deliver,
        # counting only a share of them
        goal_step = K
        goal = ev.capacity - (dl - K) * per_step * future_share
        goal = min(goal, ev.soc + int(avail.sum()) * per_step)
    if goal > ev.soc:
        B.add_le({soc[goal_step]: -1.0}, -goal)
    d = np.array([B.var(f"evsw_k{k}", 0.0, 1.0, switch_price, domain=(0.0, 1.0)) for k in range(K)])
    prev = None
    for k in range(K):
        if prev is None:
            on0 = 1.0 if on_now else 0.0
            B.add_le({zev[k]: 1.0, d[k]: -1.0}, on0)
            B.add_le({zev[k]: -1.0, d[k]: -1.0}, -on0)
        else:
            B.add_le({zev[k]: 1.0, prev: -1.0, d[k]: -1.0}, 0.0)
            B.add_le({zev[k]: -1.0, prev: 1.0, d[k]: -1.0}, 0.0)
        prev = zev[k]
    budget = ev.max_switches if switch_budget is None else switch_budget
    B.add_le({int(j): 1.0 for j in d}, float(budget))
    return EvBlock(zev, soc, d, ev, dl, ev.current, on_now, goal_step, max(goal, ev.soc), int(budget))


def add_ev(problem: MpcProblem, ev: EvModel, availability: Sequence[bool] | None = None,
           deadline: int | None = None, on_now: bool = False,
           switch_budget: int | None = None) -> MpcProblem:
    """Rebuild ``problem`` with an EV charger block."""
    return build_problem(problem.t0, problem.tw0, problem.inputs, problem.config, ev, availability,
                         deadline, on_now, switch_budget)


# ------------------------------------------------------------- evaluation
def direct_objective(problem: MpcProblem, x: np.ndarray) -> float:
    """Objective evaluated with explicit max and absolute values.

    Uses only the primary plan variables (states, set-points, powers, stage
    codes, slacks), never the epigraph helpers.
    """
    p, inp, cfg = problem, problem.inputs, problem.config
    g = {name: x[p.index[name]] for name in BLOCK}
    S, K = p.s, p.k
    pr4 = cfg.hp.p_backup_max / 4.0
    V, f = cfg.hp.voltage, cfg.hp.power_factor
    pw = cfg.wh.p_w
    i_hp = (g["Q"] / (inp.eta * f) + g["zr"] * pr4) * 1000.0 / V
    i_wh = g["zw"] * pw * 1000.0 / V
    total = i_hp + i_wh + inp.q_alpha
    if p.ev is not None:
        total = total + p.ev.current * x[p.ev.zev]
    hinge = max(0.0, float(np.max(total - cfg.i_limit)))
    energy = cfg.pi_e * (g["Q"] / inp.eta + g["zr"] * pr4 + g["zw"] * pw)
    comfort = inp.pi_t * np.abs(g["Ts"] - inp.t_pref) + inp.pi_w * np.abs(g["Tw"][:, :K] - inp.tw_pref)
    slack = cfg.slack_price_air * g["sa"] + cfg.slack_price_water * g["sw"]
    val = cfg.pi_i * hinge + cfg.dt / S * float(np.sum(energy + comfort + slack))
    if p.ev is not None:
        val += cfg.pi_e * p.ev.ev.charge_power * cfg.dt * float(np.sum(x[p.ev.zev]))
        val -= cfg.ev_soc_value / K * float(np.sum(x[p.ev.soc[1:]]))
        zev = np.r_[float(p.ev.on_now), x[p.ev.zev]]
        val += cfg.ev_switch_price * float(np.sum(np.abs(np.diff(zev))))
    return val


def tighten_epigraphs(problem: MpcProblem, x: np.ndarray) -> np.ndarray:
    """Set every epigraph helper to the value of the term it bounds."""
    p, inp, cfg = problem, problem.inputs, problem.config
    x = np.array(x, dtype=float)
    K = p.k
    x[p.index["ta"]] = np.abs(x[p.index["Ts"]] - inp.t_pref)
    tw = np.abs(x[p.index["Tw"]][:, :K] - inp.tw_pref)
    tw[:, 0] = 0.0
    x[p.index["tw"]] = tw
    total = x[p.index["I"]] + x[p.index["Iw"]] + inp.q_alpha
    if p.ev is not None:
        total = total + p.ev.current * x[p.ev.zev]
        x[p.ev.d] = np.abs(np.diff(np.r_[float(p.ev.on_now), x[p.ev.zev]]))
    x[p.v] = max(0.0, float(np.max(total - cfg.i_limit)))
    return x


# ----------------------------------------------------------------- results
@dataclass
class MpcSolution:
    air_setpoint: float
    water_setpoint: float
    objective: float
    gap: float
    status: Status
    trajectories: dict[str, np.ndarray]
    hinge: float = 0.0
    ev_on: bool | None = None
    nodes: int = 0
    solve_seconds: float = 0.0
    x: np.ndarray | None = None


def extract_actions(problem: MpcProblem, x: np.ndarray, result: MilpResult | None = None,
                    tol: float = 1e-6) -> MpcSolution:
    """First-step set-points shared by all scenarios."""
    ts0 = x[problem.index["Ts"][:, 0]]
    tw1 = x[problem.index["Tw"][:, 1]]
    if np.ptp(ts0) > tol or np.ptp(tw1) > tol:
        raise MpcConsistencyError(
            f"scenario actions disagree: set-points spread {np.ptp(ts0):.3g}, water spread {np.ptp(tw1):.3g}")
    traj = {name: x[problem.index[name]] for name in BLOCK}
    ev_on = None
    if problem.ev is not None:
        traj["zev"] = x[problem.ev.zev]
        traj["soc"] = x[problem.ev.soc]
        ev_on = bool(round(x[problem.ev.zev[0]]))
    obj = problem.milp.lp.objective(x)
    return MpcSolution(
        air_setpoint=float(ts0[0]), water_setpoint=float(tw1[0]), objective=obj,
        gap=result.gap if result is not None else 0.0,
        status=result.status if result is not None else Status.OPTIMAL,
        trajectories=traj, hinge=float(x[problem.v]), ev_on=ev_on,
        nodes=result.nodes if result is not None else 0, x=x,
    )


def _heat_combos(heat: float, eta: float, budget: float, hp: HeatPumpModel) -> list[tuple[float, float]]:
    """All (z, zr) pairs, best first: those within the current ``budget`` at
    minimum compressor output, then by how far ``heat`` lies outside their
    attainable range, then by fewer backup stages."""
    pr4 = hp.p_backup_max / 4.0
    ranked = []
    for z in (0.0, 1.0):
        for zr in hp.stage_codes:
            lo = zr * pr4 + z * eta * hp.p_min
            hi = zr * pr4 + z * eta * hp.p_max
            amps = (z * hp.p_min / hp.power_factor + zr * pr4) * 1000.0 / hp.voltage
            ranked.append(((amps > budget + 1e-9, max(lo - heat, heat - hi, 0.0), zr, z), z, float(zr)))
    ranked.sort()
    return [(z, zr) for _, z, zr in ranked]


def _heat_combo(heat: float, eta: float, budget: float, hp: HeatPumpModel) -> tuple[float, float]:
    """(z, zr) whose attainable heat range lies nearest ``heat`` without
    exceeding the current ``budget`` at minimum compressor output."""
    return _heat_combos(heat, eta, budget, hp)[0]


def dive(problem: MpcProblem, windows: Sequence[int] = (0, 3, 9, 18),
         lp_backend: str = "highs") -> MilpResult:
    """Relax-and-fix heuristic for the MPC MILP.

    Solves the LP relaxation, then fixes the integer actions window by window
    (earliest steps first), re-solving the relaxation after each window so
    later steps can compensate for rounding.  Water-heater and charger states
    are rounded sigma-delta style to keep their cumulative energy; heat-pump
    and backup states are chosen to match the relaxed total heat inside the
    remaining current budget.  The result carries the root relaxation as its
    bound, so ``gap`` is a certified upper bound on suboptimality.
    """
    lp = problem.milp.lp
    ix, inp, cfg = problem.index, problem.inputs, problem.config
    S, K = problem.s, problem.k
    session = LpSession(lp, lp_backend)
    root = session.solve()
    if root.x is None:
        return MilpResult(None, np.nan, np.inf, root.status, 1)
    bound, x = root.objective, root.x
    edges = sorted({min(max(int(w), 0), K) for w in windows} | {0, K})
    acc_w = np.zeros(S)
    ev = problem.ev
    ev_fixed: dict[int, float] = {}
    for w0, w1 in zip(edges[:-1], edges[1:]):
        fix_idx: list[int] = []
        fix_val: list[float] = []
        combos: dict[tuple[int, int], list[tuple[float, float]]] = {}
        if ev is not None:
            on_w = {k: 1.0 if x[ev.zev[k]] >= 0.5 and session.ub[ev.zev[k]] > 0 else 0.0 for k in range(w0, w1)}
            _ev_top_up(ev, on_w, ev_fixed, x, session.ub, w1, cfg.dt)
            before = float(ev.on_now) if w0 == 0 else ev_fixed[w0 - 1]
            used = sum(abs(ev_fixed[k] - (float(ev.on_now) if k == 0 else ev_fixed[k - 1])) for k in range(w0))
            _ev_limit_switches(on_w, before, ev.switch_budget - used,
                               [session.ub[ev.zev[k]] > 0 for k in range(w0, w1)])
            for k in range(w0, w1):
                ev_fixed[k] = on_w[k]
                # switch indicators follow from the fixed charger states
                before = float(ev.on_now) if k == 0 else ev_fixed[k - 1]
                fix_idx += [ev.zev[k], ev.d[k]]
                fix_val += [on_w[k], abs(on_w[k] - before)]
        for s in range(S):
            for k in range(w0, w1):
                acc_w[s] += x[ix["zw"][s, k]]
                zw = 1.0 if acc_w[s] >= 0.5 else 0.0
                acc_w[s] -= zw
                budget = cfg.i_limit - inp.q_alpha[k] - zw * cfg.wh.current
                if ev is not None:
                    budget -= ev_fixed[k] * ev.current
                heat = x[ix["Q"][s, k]] + x[ix["zr"][s, k]] * cfg.hp.p_backup_max / 4.0
                combos[s, k] = _heat_combos(heat, inp.eta[k], budget, cfg.hp)
                fix_idx.append(ix["zw"][s, k])
                fix_val.append(zw)
        hp_idx = [j for s, k in combos for j in (ix["z"][s, k], ix["zr"][s, k])]
        hp_val = [v for key in combos for v in combos[key][0]]
        session.set_bounds(fix_idx + hp_idx, fix_val + hp_val, fix_val + hp_val)
        res = session.solve()
        if res.x is None:
            res = _repair_window(session, lp, ix, combos, hp_idx)
        if res.x is None:
            return MilpResult(None, np.nan, np.inf, res.status, session.solves, bound, infeasible_so_far=True)
        x = res.x
    for j, vals in problem.milp.domains.items():
        x[j] = min(vals, key=lambda v: abs(x[j] - v))
    obj = lp.objective(x)
    gap = relative_gap(obj, bound)
    return MilpResult(x, obj, gap, Status.GAP_FEASIBLE, session.solves, bound, incumbent_history=[obj])


def _ev_top_up(ev: EvBlock, on: dict[int, float], fixed: dict[int, float], x: np.ndarray, ub: np.ndarray,
               w1: int, dt: float) -> int:
    """Switch on extra charger steps in ``on`` until the charge target stays
    reachable with the steps left after ``w1``; returns how many were added.

    Rounding each window on its own can leave the target one step short with
    no room to recover.  Steps next to an existing charging block go first so
    the extra charge costs no switches.
    """
    per_step = ev.ev.charge_power * ev.ev.efficiency * dt
    end, target = ev.goal_step, ev.goal_kwh
    done = sum(v for k, v in fixed.items() if k < end) + sum(v for k, v in on.items() if k < end)
    later = sum(1 for k in range(w1, end) if ub[ev.zev[k]] > 0)
    short = math.ceil((target - ev.ev.soc) / per_step - 1e-9) - int(round(done)) - later
    if short <= 0:
        return 0

    def state(k):
        if k < 0:
            return float(ev.on_now)
        return on.get(k, fixed.get(k, 0.0))

    cands = [k for k, v in on.items() if v == 0 and k < end and ub[ev.zev[k]] > 0]
    cands.sort(key=lambda k: (not (state(k - 1) or state(k + 1)), -x[ev.zev[k]], k))
    for k in cands[:short]:
        on[k] = 1.0
    return min(short, len(cands))


def _ev_limit_switches(on: dict[int, float], before: float, allowed: float, usable: list[bool]):
    """Flip whole runs of ``on`` (shortest first, filling gaps before dropping
    charge) until it switches at most ``allowed`` times."""
    keys = sorted(on)
    ok = dict(zip(keys, usable))
    while True:
        vals = [on[k] for k in keys]
        prev = [before] + vals[:-1]
        if sum(abs(a - b) for a, b in zip(vals, prev)) <= allowed:
            return
        runs, i = [], 0
        while i < len(keys):
            j = i
            while j + 1 < len(keys) and vals[j + 1] == vals[i]:
                j += 1
            left = before if i == 0 else vals[i - 1]
            saved = (left != vals[i]) + (j + 1 < len(keys))
            if saved and (vals[i] or all(ok[k] for k in keys[i:j + 1])):
                runs.append((vals[i], (j - i + 1) / saved, i, j))
            i = j + 1
        if not runs:
            return
        _, _, i, j = min(runs)
        for k in keys[i:j + 1]:
            on[k] = 1.0 - on[k]


def _repair_window(session: LpSession, lp: LinearProgram, ix: dict, combos: dict, hp_idx: list[int]):
    """Fix heat-pump states one step at a time, trying each (z, zr) in rank order."""
    session.set_bounds(hp_idx, lp.lb[hp_idx], lp.ub[hp_idx])
    res = session.solve()
    if res.x is None:
        return res
    for s, k in sorted(combos, key=lambda sk: (sk[1], sk[0])):
        pair = [ix["z"][s, k], ix["zr"][s, k]]
        for z, zr in combos[s, k]:
            session.set_bounds(pair, [z, zr], [z, zr])
            res = session.solve()
            if res.x is not None:
                break
        else:
            return res
    return res


def solve(problem: MpcProblem, gap_tol: float = 0.01, time_limit: float = 60.0,
          backend: str = "native", method: str = "milp") -> MpcSolution | MilpResult:
    """Solve and extract actions; returns the raw result when there is no plan.

    ``method="milp"`` runs branch-and-bound to ``gap_tol``; ``method="dive"``
    runs the fast relax-and-fix heuristic (its LP solves use ``backend``).
    """
    t = time.perf_counter()
    if method == "dive":
        res = dive(problem, lp_backend=backend)
    elif method == "milp":
        res = solve_milp(problem.milp, gap_tol=gap_tol, time_limit=time_limit, backend=backend)
    else:
        raise ValueError(f"unknown MPC solve method {method!r}")
    if res.x is None:
        return res
    if res.gap <= gap_tol:
        res.status = Status.OPTIMAL
    sol = extract_actions(problem, res.x, res)
    sol.solve_seconds = time.perf_counter() - t
    return sol


def write_solution_csv(problem: MpcProblem, x: np.ndarray, path: str | Path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["name", "value"])
        for name, val in zip(problem.milp.lp.names, x):
            wr.writerow([name, repr(float(val))])


def variable_count(k: int, s: int) -> int:
    """Size of the base problem without an EV block."""
    return s * (2 * (k + 1) + 11 * k) + 1


def horizon_inputs(start_hour: float, t_out: Sequence[float], w_hat: Sequence[float],
                   ww: np.ndarray, params: ThermalParams, hp: HeatPumpModel,
                   sigma: Sequence[float] | None = None, q_alpha: Sequence[float] | None = None,
                   dt: float = DT_DEFAULT) -> MpcInputs:
    """Assemble horizon data from forecasts; COP and boundary temperature follow t_out."""
    from .devices import cop
    from .thermal import effective_boundary_temp

    t_out = np.asarray(t_out, dtype=float)
    K = t_out.size
    hours = (start_hour + dt * np.arange(K)) % 24
    sig = None
    if sigma is not None:
        s_arr = np.asarray(sigma, dtype=float)
        sig = np.concatenate([s_arr[:K], np.full(max(0, K - s_arr.size), s_arr[-1])])
    return MpcInputs(
        hours=hours, t_out=t_out,
        theta=np.asarray(effective_boundary_temp(t_out, params), dtype=float),
        eta=np.array([cop(hp, t) for t in t_out]),
        w_hat=np.asarray(w_hat, dtype=float), ww=np.atleast_2d(ww),
        sigma=sig, q_alpha=None if q_alpha is None else np.asarray(q_alpha, dtype=float),
    )
