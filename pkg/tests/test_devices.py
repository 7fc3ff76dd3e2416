import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ampguard.devices import (COP_TABLE, EvModel, HeatPumpModel, TripCurve, WaterHeaterModel, Zone, ZoneTracker,
                              breaker_zone, cop, draw_heat_rate, ev_step, fit_cop, hp_current, wh_step)


@pytest.mark.parametrize("code,amps", [(0, 0.0), (2, 40.0), (3, 60.0), (4, 80.0)])
def test_backup_stage_currents(code, amps):
    assert hp_current(0.0, 2.0, code) == pytest.approx(amps, abs=1e-9)


def test_water_heater_current():
    assert WaterHeaterModel().current == pytest.approx(18.75)


def test_water_heater_pole():
    assert WaterHeaterModel(c_w=0.197, r_w=1476.0).a_w == pytest.approx(0.9997, abs=1e-4)


def test_compressor_current_uses_power_factor():
    # 3 kW thermal at COP 2.5 is 1.2 kW electrical, 1.5 kVA at pf 0.8
    assert hp_current(3.0, 2.5, 0) == pytest.approx(1500.0 / 240.0)


def test_negative_heat_rejected():
    with pytest.raises(ValueError):
        hp_current(-1.0, 2.0, 0)


def test_unknown_stage_rejected():
    with pytest.raises(ValueError):
        HeatPumpModel().stage_power(1)


def test_cop_fit_reproduces_table():
    coeffs = fit_cop()
    for t, y in COP_TABLE:
        assert np.polyval(coeffs, t) == pytest.approx(y, abs=0.05)


def test_cop_clipped_outside_range():
    m = HeatPumpModel()
    assert cop(m, -40.0) == cop(m, m.t_range[0])
    assert cop(m, 40.0) == cop(m, m.t_range[1])


@given(st.floats(-25, 20))
def test_cop_at_least_one(t):
    assert cop(HeatPumpModel(), t) >= 1.0


def test_wh_step_worked_example():
    m = WaterHeaterModel()
    a = m.a_w
    expect = a * 50.0 + (1 - a) * (m.t_ambient + m.r_w * (m.p_w - 1.0))
    assert wh_step(50.0, True, 1.0, m) == pytest.approx(expect, abs=1e-12)


def test_wh_idle_tank_cools_toward_ambient():
    m = WaterHeaterModel()
    t = 55.0
    for _ in range(12):
        t1 = wh_step(t, False, 0.0, m)
        assert m.t_ambient < t1 < t
        t = t1


def test_draw_heat_rate():
    # 6 L/min heated 42 C: 0.1 kg/s * 4.186 * 42
    assert draw_heat_rate(6.0, 50.0, 8.0) == pytest.approx(0.1 * 4.186 * 42.0)
    assert draw_heat_rate(-1.0, 50.0) == 0.0


def test_ev_step_caps_at_capacity():
    ev = EvModel(soc=69.0)
    assert ev_step(ev, True, 1.0).soc == 70.0
    assert ev_step(ev, False, 1.0).soc == 69.0


def test_ev_current_and_steps():
    ev = EvModel()
    assert ev.current == pytest.approx(47.9, abs=0.1)
    # 28 kWh at 11.5 kW in 5-minute steps
    assert ev.steps_needed(1 / 12) == 30


def test_ev_rejects_soc_above_capacity():
    with pytest.raises(ValueError):
        EvModel(soc=71.0)


@pytest.mark.parametrize("amps,minutes,zone", [
    (50, 0, Zone.NORMAL), (95, 60, Zone.UNDESIRABLE), (105, 5, Zone.UNSAFE),
    (105, 10, Zone.TRIP_LIKELY), (120, 0, Zone.TRIP_LIKELY), (600, 0, Zone.TRIP_LIKELY),
])
def test_breaker_zones(amps, minutes, zone):
    assert breaker_zone(amps, minutes).zone is zone


def test_magnetic_trip_flag():
    assert breaker_zone(500.0).magnetic
    assert not breaker_zone(499.0).magnetic


def test_tracker_accumulates_time_above_rating():
    tr = ZoneTracker(TripCurve(), step_minutes=5.0)
    assert tr.update(105.0).zone is Zone.UNSAFE
    assert tr.update(105.0).zone is Zone.TRIP_LIKELY
    assert tr.update(80.0).zone is Zone.NORMAL
    assert tr.update(105.0).zone is Zone.UNSAFE


def test_trip_curve_must_be_monotone():
    with pytest.raises(ValueError):
        TripCurve(boundaries=((1.2, 5.0), (1.0, 1.0)))
