from dataclasses import replace

import numpy as np
import pytest
from helpers import PARAMS, desk_inputs, desk_problem

from ampguard.devices import EvModel, HeatPumpModel
from ampguard.milp import LinearProgram, Milp, Status, solve_lp, solve_milp
from ampguard.mpc import (BLOCK, EvInfeasible, MpcConfig, MpcConsistencyError, build_problem, comfort_price,
                          direct_objective, dive, extract_actions, indoor_preference, solve, tighten_epigraphs,
                          variable_count, water_price_schedule)
from ampguard.mpc import _heat_combos


def random_feasible_plan(problem, rng):
    """Dive on a copy of the problem with randomly perturbed prices; the plan
    is feasible for the original problem but generally not optimal for it."""
    lp = problem.milp.lp
    c = lp.c * rng.uniform(0.2, 5.0, lp.n) + rng.uniform(0, 0.5, lp.n)
    c[problem.v] = lp.c[problem.v]
    skewed = LinearProgram(c, lp.A_eq, lp.b_eq, lp.A_ub, lp.b_ub, lp.lb, lp.ub, obj_offset=lp.obj_offset)
    return dive(replace(problem, milp=Milp(skewed, problem.milp.domains)))


def test_prices_and_preferences():
    assert comfort_price(-20.0) == pytest.approx(6.0)
    assert comfort_price(10.0) == 0.0
    assert water_price_schedule(5.0) == (12.0, 54.4)
    assert water_price_schedule(6.0) == (6.0, 48.9)
    assert indoor_preference(6.0) == 21.0
    assert indoor_preference(22.0) == 19.5


def test_variable_count_matches_build():
    p = desk_problem(k=12, s=3)
    assert p.n == variable_count(12, 3)


def test_index_shapes():
    p = desk_problem(k=10, s=2)
    for name in BLOCK:
        assert p.index[name].shape == (2, 11 if name in ("T", "Tw") else 10)


def test_initial_state_fixed():
    p = desk_problem(k=6, s=2, t0=19.7, tw0=47.0)
    lp = p.milp.lp
    for name, val in (("T", 19.7), ("Tw", 47.0)):
        j = p.index[name][:, 0]
        assert np.all(lp.lb[j] == val) and np.all(lp.ub[j] == val)


def test_out_of_bounds_state_warns():
    p = desk_problem(k=6, s=1, t0=17.0)
    assert any("indoor" in w for w in p.warnings)


def test_epigraph_objective_equals_direct_on_random_plans():
    rng = np.random.default_rng(0)
    p = desk_problem(k=36, s=4, seed=3)
    for _ in range(10):
        res = random_feasible_plan(p, rng)
        x = tighten_epigraphs(p, res.x)
        assert p.milp.lp.max_violation(x) < 1e-6
        assert p.milp.is_domain_feasible(x)
        assert p.milp.lp.objective(x) == pytest.approx(direct_objective(p, x), abs=1e-6)


def test_epigraph_objective_equals_direct_at_solution():
    p = desk_problem(k=36, s=4, seed=5)
    sol = solve(p, method="dive", backend="highs")
    assert sol.objective == pytest.approx(direct_objective(p, sol.x), abs=1e-6)


def test_loose_epigraph_only_overstates_objective():
    rng = np.random.default_rng(1)
    p = desk_problem(k=12, s=2)
    res = random_feasible_plan(p, rng)
    x = tighten_epigraphs(p, res.x)
    x[p.index["ta"][0, 3]] += 0.5
    assert p.milp.lp.objective(x) > direct_objective(p, x)


def test_first_step_actions_shared_across_eight_scenarios():
    p = desk_problem(k=36, s=8, seed=2)
    sol = solve(p, method="dive", backend="highs")
    ts0 = sol.trajectories["Ts"][:, 0]
    tw1 = sol.trajectories["Tw"][:, 1]
    assert np.ptp(ts0) < 1e-6 and np.ptp(tw1) < 1e-6
    # later steps are free to differ under different draws
    assert np.ptp(sol.trajectories["Tw"][:, -1]) > 1e-3


def test_extract_actions_rejects_disagreement():
    p = desk_problem(k=6, s=2)
    sol = solve(p, method="dive", backend="highs")
    x = sol.x.copy()
    x[p.index["Ts"][1, 0]] += 0.5
    with pytest.raises(MpcConsistencyError):
        extract_actions(p, x)


def _duplicated(k, s, seed):
    inp = desk_inputs(k, 1, seed)
    dup = replace(inp, ww=np.repeat(inp.ww, s, axis=0))
    cfg1 = MpcConfig.from_thermal(PARAMS, k=k, s=1)
    cfgs = MpcConfig.from_thermal(PARAMS, k=k, s=s)
    return build_problem(20.3, 50.0, inp, cfg1), build_problem(20.3, 50.0, dup, cfgs)


def test_duplicated_scenarios_leave_relaxation_unchanged():
    one, many = _duplicated(36, 4, seed=7)
    r1 = solve_lp(one.milp.lp, backend="highs")
    rs = solve_lp(many.milp.lp, backend="highs")
    assert rs.objective == pytest.approx(r1.objective, abs=1e-6)


def test_duplicated_scenarios_leave_milp_unchanged():
    one, many = _duplicated(6, 3, seed=8)
    a = solve_milp(one.milp, gap_tol=0.0, backend="highs")
    b = solve_milp(many.milp, gap_tol=0.0, backend="highs")
    assert b.objective == pytest.approx(a.objective, abs=1e-6)
    sa, sb = extract_actions(one, a.x), extract_actions(many, b.x)
    assert sb.air_setpoint == pytest.approx(sa.air_setpoint, abs=1e-6)


def test_dive_matches_exact_solver_on_small_problem():
    p = desk_problem(k=8, s=2, seed=4)
    exact = solve_milp(p.milp, gap_tol=0.0, backend="highs")
    d = dive(p)
    assert d.x is not None
    assert d.bound <= exact.objective + 1e-6
    assert d.objective >= exact.objective - 1e-6
    assert p.milp.is_domain_feasible(d.x)
    assert p.milp.lp.max_violation(d.x) < 1e-6


def test_native_branch_and_bound_agrees_with_highs_on_tiny_plan():
    p = desk_problem(k=3, s=1, seed=9)
    a = solve_milp(p.milp, gap_tol=0.0, backend="native", time_limit=60)
    b = solve_milp(p.milp, gap_tol=0.0, backend="highs")
    assert a.objective == pytest.approx(b.objective, rel=1e-6, abs=1e-6)


def test_plan_respects_current_limit_when_possible():
    p = desk_problem(k=36, s=4, seed=1, t_out=-10.0)
    sol = solve(p, method="dive", backend="highs")
    assert sol.hinge == pytest.approx(0.0, abs=1e-6)


def test_heat_combos_prefer_within_budget():
    hp = HeatPumpModel()
    combos = _heat_combos(10.0, 2.0, 50.0, hp)
    z, zr = combos[0]
    amps = (z * hp.p_min / hp.power_factor + zr * hp.p_backup_max / 4) * 1000 / hp.voltage
    assert amps <= 50.0
    assert len(combos) == 8


def test_heat_combos_exact_match_first():
    hp = HeatPumpModel()
    # 9.6 kW of backup plus compressor at COP 2 spans [14.6, 17.4]
    assert _heat_combos(16.0, 2.0, 200.0, hp)[0] == (1.0, 2.0)


def test_ev_deadline_enforced():
    ev = EvModel(soc=60.0)
    p = desk_problem(k=24, s=2, t_out=-5.0, ev=ev, ev_deadline=20)
    sol = solve(p, method="dive", backend="highs")
    assert sol.trajectories["soc"][20] >= 70.0 - 1e-6
    assert np.sum(np.abs(np.diff(np.r_[0, np.round(sol.trajectories["zev"])]))) <= ev.max_switches


def test_ev_prices_agree_with_direct_objective():
    rng = np.random.default_rng(4)
    p = desk_problem(k=24, s=2, t_out=-8.0, ev=EvModel(soc=40.0), ev_deadline=40,
                     cfg_kw=dict(ev_soc_value=0.5, ev_switch_price=1.0, ev_future_share=0.7))
    for _ in range(3):
        x = tighten_epigraphs(p, random_feasible_plan(p, rng).x)
        assert p.milp.lp.objective(x) == pytest.approx(direct_objective(p, x), abs=1e-6)


def test_charge_credit_moves_charging_forward():
    kw = dict(k=24, s=1, t_out=-5.0, ev=EvModel(soc=50.0), ev_deadline=100)
    late = solve(desk_problem(**kw), method="dive", backend="highs")
    early = solve(desk_problem(cfg_kw=dict(ev_soc_value=0.5), **kw), method="dive", backend="highs")
    assert early.trajectories["soc"][12] > late.trajectories["soc"][12]


def test_ev_infeasible_deadline_raises():
    with pytest.raises(EvInfeasible):
        desk_problem(k=12, s=1, ev=EvModel(soc=10.0), ev_deadline=10)


def test_ev_switch_budget_row():
    p = desk_problem(k=12, s=1, ev=EvModel(soc=65.0), ev_switch_budget=2, t_out=-5.0)
    sol = solve(p, method="dive", backend="highs")
    d = sol.x[p.ev.d]
    assert d.sum() <= 2 + 1e-9


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        solve(desk_problem(k=3, s=1), method="guess")


def test_lp_export_round_trip(tmp_path):
    from ampguard.milp import read_lp

    p = desk_problem(k=4, s=2)
    p.to_lp(tmp_path / "plan.lp")
    back = read_lp(tmp_path / "plan.lp")
    by_name = lambda m: {m.lp.names[j]: d for j, d in m.domains.items()}  # noqa: E731
    assert by_name(back) == by_name(p.milp)
    a = solve_milp(p.milp, gap_tol=0.0, backend="highs")
    b = solve_milp(back, gap_tol=0.0, backend="highs")
    assert b.status in (Status.OPTIMAL, Status.GAP_FEASIBLE)
    assert b.objective == pytest.approx(a.objective, rel=1e-9, abs=1e-6)
