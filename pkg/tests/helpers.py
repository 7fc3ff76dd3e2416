"""Shared builders: synthetic data, random optimisation problems and their
brute-force oracles, and desk-scale planning problems."""

import itertools
import math

import numpy as np
from scipy.optimize import linprog

from ampguard.devices import HeatPumpModel
from ampguard.forecast import UncontrolledProfile, WeatherPoint
from ampguard.milp import LinearProgram, Milp
from ampguard.mpc import MpcConfig, build_problem, current_chance_terms, horizon_inputs
from ampguard.thermal import OvernightSample, ThermalParams, effective_boundary_temp, step_temperature

PARAMS = ThermalParams(r_out=3.0, r_m=1.5, c=4.0, t_mass=20.0)
PROFILE = UncontrolledProfile(tuple(8.0 + 6.0 * (17 <= h < 21) for h in range(24)))


def water_draws(s, k, seed):
    rng = np.random.default_rng(seed)
    ww = np.zeros((s, k))
    for i in range(s):
        hours = rng.choice(k // 12 + 1, size=2)
        for h in hours:
            ww[i, h * 12:(h + 1) * 12] = rng.uniform(0.5, 3.0)
    return ww


def desk_inputs(k=36, s=4, seed=0, t_out=-18.0, start_hour=17.0):
    rng = np.random.default_rng(seed)
    temps = t_out + rng.normal(0, 1.0, k).cumsum() * 0.2
    w_hat = 0.8 + 0.3 * rng.normal(size=k)
    hours = (start_hour + np.arange(k) / 12.0) % 24
    return horizon_inputs(start_hour, temps, w_hat, water_draws(s, k, seed + 1), PARAMS, HeatPumpModel(),
                          sigma=np.full(12, 0.3), q_alpha=current_chance_terms(PROFILE, hours))


def desk_problem(k=36, s=4, seed=0, t_out=-18.0, t0=20.3, tw0=50.0, cfg_kw=None, **kw):
    cfg = MpcConfig.from_thermal(PARAMS, k=k, s=s, stage_headroom=(1.0, 0.3), **(cfg_kw or {}))
    return build_problem(t0, tw0, desk_inputs(k, s, seed, t_out), cfg, **kw)


# ----------------------------------------------------------- thermal data
def analytic(t0, theta, r, c, q, w, t):
    """Closed-form solution of C dT/dt = (theta - T)/r + q + w at time t."""
    eq = theta + r * (q + w)
    return eq + (t0 - eq) * math.exp(-t / (r * c))


def synthetic_samples(truth: ThermalParams, seed=0):
    """Noiseless overnight samples: steady pairs plus one excited trajectory."""
    rng = np.random.default_rng(seed)
    steady = []
    for _ in range(40):
        t_out = rng.uniform(-20, 5)
        q = rng.uniform(1, 8)
        t = t_out + truth.r_out * (q + truth.w0)
        steady.append(OvernightSample(t, t, t_out, q, True))
    unsteady = []
    t = 20.0
    for k in range(400):
        t_out = -10 + 5 * math.sin(k / 30.0)
        q = 4.0 + 3.0 * math.sin(k / 7.0) + (2.0 if (k // 25) % 2 else 0.0)
        theta = effective_boundary_temp(t_out, truth)
        t1 = step_temperature(t, theta, q, truth.w0, truth)
        unsteady.append(OvernightSample(t, t1, t_out, q, False))
        t = t1
    return steady, unsteady


# ---------------------------------------------------------- forecast data
def synthetic_weather(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = []
    for k in range(n):
        h = (k * 5 / 60.0) % 24
        t = -8 + 6 * np.sin(2 * np.pi * (h - 9) / 24) + rng.normal(0, 0.5)
        pts.append(WeatherPoint(h, t, abs(rng.normal(3, 1)), max(0.0, 500 * np.sin(np.pi * (h - 7) / 10))))
    return pts


def ar1(n, phi=0.9, scale=0.4, seed=1):
    rng = np.random.default_rng(seed)
    e = np.zeros(n)
    for k in range(1, n):
        e[k] = phi * e[k - 1] + rng.normal(0, scale)
    return e


# ------------------------------------------------- random LPs and MILPs
def random_lp(rng, n=6, m_ub=5, m_eq=2):
    """Feasible by construction (a known interior point); may be unbounded."""
    x0 = rng.uniform(0.5, 2.0, n)
    A_ub = rng.normal(size=(m_ub, n))
    b_ub = A_ub @ x0 + rng.uniform(0.1, 1.0, m_ub)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x0
    lb = np.where(rng.random(n) < 0.2, -np.inf, 0.0)
    ub = np.where(rng.random(n) < 0.3, np.inf, 5.0)
    ub[lb == -np.inf] = 5.0
    return LinearProgram(rng.normal(size=n), A_eq, b_eq, A_ub, b_ub, lb, ub)


def reference_lp(lp, lb=None, ub=None):
    """The same LP through scipy's HiGHS wrapper."""
    lb = lp.lb if lb is None else lb
    ub = lp.ub if ub is None else ub
    return linprog(lp.c, A_ub=lp.A_ub.toarray() if lp.b_ub.size else None, b_ub=lp.b_ub if lp.b_ub.size else None,
                   A_eq=lp.A_eq.toarray() if lp.b_eq.size else None, b_eq=lp.b_eq if lp.b_eq.size else None,
                   bounds=list(zip(np.where(np.isinf(lb), None, lb), np.where(np.isinf(ub), None, ub))),
                   method="highs")


def random_binary_milp(rng, n_int):
    """Binary MILP with a feasible point built in.

    Up to 10 integers it also gets a few continuous columns (and one
    {0, 2, 3, 4} column when small); above that it is pure integer so
    enumeration can be vectorised.
    """
    n_c = int(rng.integers(1, 4)) if n_int <= 10 else 0
    n = n_int + n_c
    m = int(rng.integers(1, 8))
    A = rng.normal(size=(m, n))
    x0 = np.concatenate([rng.integers(0, 2, n_int), rng.uniform(0, 1, n_c)])
    b = A @ x0 + rng.uniform(0, 1, m)
    lb, ub = np.zeros(n), np.ones(n)
    doms = {j: (0.0, 1.0) for j in range(n_int)}
    if 2 <= n_int <= 8:
        ub[0] = 4.0
        doms[0] = (0.0, 2.0, 3.0, 4.0)
    m_eq = int(rng.integers(0, 2)) if n_c else 0
    A_eq = rng.normal(size=(m_eq, n))
    lp = LinearProgram(rng.normal(size=n), A_eq if m_eq else None, A_eq @ x0 if m_eq else None, A, b, lb, ub)
    return Milp(lp, doms)


def enumerate_optimum(milp):
    """Exhaustive: try every integer assignment (solving the continuous rest
    by LP when there is one).  Returns inf when nothing is feasible."""
    lp = milp.lp
    ints = sorted(milp.domains)
    grids = [np.asarray(milp.domains[j], dtype=float) for j in ints]
    best = np.inf
    if len(ints) == lp.n:
        A_ub, A_eq = lp.A_ub.toarray(), lp.A_eq.toarray()
        head, tail = grids[:4], grids[4:]
        rest = np.array(list(itertools.product(*tail))) if tail else np.zeros((1, 0))
        for h in itertools.product(*head):
            X = np.hstack([np.tile(h, (len(rest), 1)), rest])
            ok = np.all(X @ A_ub.T <= lp.b_ub + 1e-9, axis=1)
            if lp.b_eq.size:
                ok &= np.all(np.abs(X @ A_eq.T - lp.b_eq) <= 1e-9, axis=1)
            if ok.any():
                best = min(best, float((X[ok] @ lp.c).min()))
        return best + lp.obj_offset
    for combo in itertools.product(*grids):
        lb, ub = lp.lb.copy(), lp.ub.copy()
        lb[ints] = combo
        ub[ints] = combo
        res = reference_lp(lp, lb, ub)
        if res.status == 0:
            best = min(best, res.fun)
    return best + lp.obj_offset
