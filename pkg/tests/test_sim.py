from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampguard.devices import Zone
from ampguard.sim import SimConfig, run_closed_loop, score
from ampguard.sim.metrics import block_average, defrost_prediction, excursions
from ampguard.sim.plant import (HpMode, PlantCommand, PlantConfig, PlantState, defrost_interval_minutes,
                                energy_residual, plant_step)
from ampguard.sim.trace import read_trace_csv
from ampguard.sim.weather import cold_snap, read_weather_csv, synthetic_winter


def test_block_average_drops_partial_block():
    np.testing.assert_array_equal(block_average(np.arange(7.0), 3), [1.0, 4.0])


def test_score_fixture():
    # 30 s samples: 20 minutes at 95 A, 10 minutes at 105 A, 30 minutes at 50 A
    cur = np.r_[np.full(40, 95.0), np.full(20, 105.0), np.full(60, 50.0)]
    m = score(cur)
    assert m[90].total_minutes == 30.0
    assert m[90].episodes == 1
    assert m[90].long_episodes == 1
    assert m[100].total_minutes == 10.0
    assert m[100].long_episodes == 0
    assert m[110].episodes == 0
    assert m.max_average == 105.0
    assert m.worst_zone is Zone.TRIP_LIKELY
    assert m.trips == 1
    assert m.days == pytest.approx(1.0 / 24.0)
    assert m[90].episodes_per_day == pytest.approx(24.0)


def test_score_raw_samples():
    cur = np.r_[np.full(3, 101.0), np.zeros(3), np.full(2, 101.0)]
    m = score(cur, average_minutes=None)
    assert m[100].episodes == 2
    assert m[100].total_minutes == pytest.approx(2.5)


def test_excursions_counts_runs():
    assert excursions(np.array([0, 101, 102, 0, 101]), 100.0) == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 150), min_size=10, max_size=200))
def test_higher_limits_never_see_more_minutes(vals):
    m = score(np.array(vals), average_minutes=None)
    mins = [m[lim].total_minutes for lim in (80, 90, 100, 110)]
    assert mins == sorted(mins, reverse=True)


def test_defrost_prediction_scoring():
    alarm = np.zeros(100, dtype=bool)
    alarm[8:10] = True  # two rows ahead of the onset at 10
    alarm[40:42] = True  # nothing follows
    alarm[70] = True  # same row as the onset: not ahead of it
    r = defrost_prediction(np.array([10, 71]), alarm, lookahead=5)
    assert (r.onsets, r.predicted) == (2, 2)
    r = defrost_prediction(np.array([10, 70]), alarm, lookahead=5)
    assert r.predicted == 1 and r.hit_rate == 0.5
    assert r.alarms == 3 and r.false_alarms == 1
    assert r.false_positive_rate == pytest.approx(1 / 3)


def test_defrost_prediction_without_onsets():
    r = defrost_prediction(np.array([], dtype=int), np.zeros(10, dtype=bool))
    assert r.hit_rate == 1.0 and r.false_positive_rate == 0.0


def test_cold_snap_reaches_low():
    w = cold_snap()
    assert len(w) == 31 * 288
    assert w.t_out.min() == pytest.approx(-20.0)
    assert w.t_out[: 5 * 288].mean() > -8.0


def test_weather_csv_round_trip(tmp_path):
    w = synthetic_winter(2, seed=5)
    w.to_csv(tmp_path / "w.csv")
    back = read_weather_csv(tmp_path / "w.csv")
    np.testing.assert_allclose(back.t_out, w.t_out, atol=5e-4)  # three decimals on disk
    assert back.start == w.start


def test_plant_conserves_energy():
    cfg = PlantConfig()
    s = PlantState(t_in=19.0, t_mass=19.5)
    for k in range(200):
        cmd = PlantCommand(hp_setpoint=21.0 if k < 100 else 18.0)
        s1 = plant_step(s, cmd, -12.0, 3.0, 0.0, 0.5, 10.0, cfg)
        assert abs(energy_residual(s, s1, -12.0, cfg)) < 1e-9
        s = s1


def test_plant_heats_toward_setpoint():
    s = PlantState(t_in=18.0, t_mass=18.0)
    temps = []
    for _ in range(2 * 2880):
        s = plant_step(s, PlantCommand(21.0), -5.0, 2.0, 0.0, 0.0, 0.0)
        temps.append(s.t_in)
    # the compressor cycles around the point gamma below set-point
    assert np.mean(temps[2880:]) == pytest.approx(21.0 - PlantConfig().gamma, abs=0.15)


def test_defrost_interval_shape():
    cfg = PlantConfig()
    assert defrost_interval_minutes(10.0, cfg) == float("inf")
    # frost builds fastest near the peak and slower in dry deep cold
    assert defrost_interval_minutes(-5.0, cfg) < defrost_interval_minutes(-20.0, cfg)
    assert defrost_interval_minutes(-5.0, cfg) < defrost_interval_minutes(0.0, cfg)


def test_plant_runs_defrost_cycles_in_cold():
    s = PlantState(t_in=20.0, t_mass=20.0)
    modes = []
    for _ in range(2 * 240):
        s = plant_step(s, PlantCommand(21.0), -8.0, 2.0, 0.0, 0.0, 0.0)
        modes.append(s.hp_mode)
    assert HpMode.DEFROST in modes


@pytest.fixture(scope="module")
def baseline_day():
    return run_closed_loop(SimConfig(seed=3, days=1, controller="baseline", weather=cold_snap(31).slice_days(12, 1)))


def test_baseline_trace_is_complete(baseline_day):
    assert len(baseline_day) == 2880
    assert baseline_day.step_seconds == 30.0
    total = baseline_day["i_hp"] + baseline_day["i_wh"] + baseline_day["i_ev"] + baseline_day["i_uncontrolled"]
    np.testing.assert_allclose(baseline_day["i_total"], total)


def test_closed_loop_is_deterministic(baseline_day):
    again = run_closed_loop(SimConfig(seed=3, days=1, controller="baseline",
                                      weather=cold_snap(31).slice_days(12, 1)))
    np.testing.assert_array_equal(again["i_total"], baseline_day["i_total"])


def test_trace_csv_round_trip(baseline_day, tmp_path):
    baseline_day.to_csv(tmp_path / "t.csv", ("supply_temp",))
    back = read_trace_csv(tmp_path / "t.csv")
    np.testing.assert_allclose(back["i_total"], baseline_day["i_total"], atol=5e-5)
    np.testing.assert_allclose(back["supply_temp"], baseline_day["supply_temp"], atol=5e-5)
    assert list(back["override_reason"][:3]) == list(baseline_day["override_reason"][:3])
    assert back.start == baseline_day.start


def test_read_trace_rejects_irregular_steps(baseline_day, tmp_path):
    p = tmp_path / "t.csv"
    baseline_day.to_csv(p)
    lines = p.read_text().splitlines()
    del lines[5]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        read_trace_csv(p)


def test_trace_timestamps(baseline_day):
    assert baseline_day.time(120) - baseline_day.time(0) == timedelta(hours=1)
    assert baseline_day.days == pytest.approx(1.0)
