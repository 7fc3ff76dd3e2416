import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import analytic, synthetic_samples

from ampguard.thermal import (DT_DEFAULT, IdentificationError, OvernightSample, ThermalParams, TrackingParams,
                              default_r_m_grid, discretize, effective_boundary_temp, fit_steady, fit_unsteady,
                              identify, invert_for_w, read_params, simulate, step_temperature, track_setpoint,
                              write_params)


def test_discretize_known_value():
    assert discretize(2.0, 3.0, 0.5) == pytest.approx(math.exp(-0.5 / 6.0), abs=1e-15)


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_discretize_rejects_nonpositive(bad):
    with pytest.raises(ValueError):
        discretize(*bad)


@settings(max_examples=200, deadline=None)
@given(r_out=st.floats(0.5, 10), r_m=st.floats(0.2, 20), c=st.floats(0.5, 20),
       t0=st.floats(10, 25), t_out=st.floats(-30, 15), q=st.floats(0, 20), w=st.floats(-3, 5))
def test_step_matches_analytic_solution(r_out, r_m, c, t0, t_out, q, w):
    p = ThermalParams(r_out, r_m, c, t_mass=19.0)
    theta = effective_boundary_temp(t_out, p)
    got = step_temperature(t0, theta, q, w, p)
    assert got == pytest.approx(analytic(t0, theta, p.r_eff, c, q, w, p.dt), abs=1e-9)


def test_simulate_over_many_steps_matches_analytic():
    p = ThermalParams(3.0, 1.5, 4.0)
    n = 48
    traj = simulate(18.0, np.full(n, -12.0), np.full(n, 3.0), np.full(n, 0.5), p)
    theta = float(effective_boundary_temp(-12.0, p))
    expect = [analytic(18.0, theta, p.r_eff, p.c, 3.0, 0.5, k * p.dt) for k in range(n + 1)]
    np.testing.assert_allclose(traj, expect, atol=1e-9)


def test_steady_state_is_fixed_point():
    p = ThermalParams(2.0, 1.0, 5.0)
    theta = float(effective_boundary_temp(0.0, p))
    eq = theta + p.r_eff * (4.0 + 1.0)
    assert step_temperature(eq, theta, 4.0, 1.0, p) == pytest.approx(eq, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(t0=st.floats(15, 25), q=st.floats(0, 15), w=st.floats(-2, 4), t_out=st.floats(-25, 10))
def test_invert_for_w_round_trip(t0, q, w, t_out):
    p = ThermalParams(3.0, 1.2, 6.0)
    theta = effective_boundary_temp(t_out, p)
    t1 = step_temperature(t0, theta, q, w, p)
    assert invert_for_w(t0, t1, theta, q, p) == pytest.approx(w, abs=1e-6)


def test_from_a_round_trip():
    p = ThermalParams(3.0, 1.5, 4.0)
    q = ThermalParams.from_a(3.0, 1.5, p.a)
    assert q.c == pytest.approx(4.0, rel=1e-12)


def test_boundary_temperature_is_resistance_weighted():
    p = ThermalParams(r_out=3.0, r_m=1.0, c=1.0, t_mass=20.0)
    # r_m * t_out + r_out * t_mass over the sum
    assert effective_boundary_temp(-10.0, p) == pytest.approx((1.0 * -10.0 + 3.0 * 20.0) / 4.0)


def test_identify_recovers_truth_on_noiseless_data():
    r_out, w0 = 3.0, 0.8
    grid = default_r_m_grid(r_out)
    r_m = float(grid[11])  # a grid point, so exact recovery is possible
    truth = ThermalParams(r_out, r_m, 5.0, t_mass=19.5, w0=w0)
    steady, unsteady = synthetic_samples(truth)
    est = identify(steady + unsteady, t_mass=19.5)
    assert est.r_out == pytest.approx(r_out, rel=0.05)
    assert est.w0 == pytest.approx(w0, rel=0.05)
    assert est.r_m == pytest.approx(r_m, rel=1e-9)
    assert est.a == pytest.approx(truth.a, rel=0.05)


def test_fit_unsteady_scores_every_grid_point():
    truth = ThermalParams(2.0, 1.0, 3.0, t_mass=20.0)
    _, uns = synthetic_samples(truth)
    grid = default_r_m_grid(2.0, n=7)
    fit = fit_unsteady(uns, 2.0, 0.0, grid, t_mass=20.0)
    assert len(fit.grid_mse) == 7
    assert fit.val_mse == min(fit.grid_mse)


def test_fit_steady_rejects_constant_power():
    s = [OvernightSample(20, 20, 0, 3.0, True) for _ in range(5)]
    with pytest.raises(IdentificationError):
        fit_steady(s)


def test_fit_steady_needs_two_samples():
    with pytest.raises(IdentificationError):
        fit_steady([OvernightSample(20, 20, 0, 3.0, True)])


def test_params_file_round_trip(tmp_path):
    p = ThermalParams(2.5, 0.7, 4.4, 19.2, 0.3)
    write_params(p, tmp_path / "thermal.txt")
    assert read_params(tmp_path / "thermal.txt") == p


def test_tracking_settles_gamma_below_setpoint():
    tp = TrackingParams(b=0.5, gamma=0.5)
    t = 18.0
    for _ in range(60):
        t = track_setpoint(t, 21.0, tp)
    assert t == pytest.approx(20.5, abs=1e-9)


def test_tracking_from_tau():
    tp = TrackingParams.from_tau(0.25)
    assert tp.tau == pytest.approx(0.25)
    assert tp.dt == DT_DEFAULT
