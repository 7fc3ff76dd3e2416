import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ampguard.lowlevel import (N_LAGS, DefrostPredictor, LowLevelConfig, LowLevelController, LowLevelInputs, Reason,
                               defrost_stage, fit_supply_ar, low_level_step, predict_defrost)

FLAT = DefrostPredictor((1.0,) + (0.0,) * (N_LAGS - 1))  # predicts the newest sample


def inputs(**kw):
    base = dict(whole_home_current=50.0, backup_stage=0, water_flow_active=False, t_w=50.0,
                supply_temps=(35.0,) * N_LAGS, return_temp=20.0, hp_on=True, t_out=-5.0,
                hl_air_setpoint=21.0, hl_water_setpoint=50.0)
    base.update(kw)
    return LowLevelInputs(**base)


def test_pass_through():
    cmd = low_level_step(inputs(), FLAT)
    assert cmd == cmd.__class__(True, 50.0, 21.0, Reason.NONE)


def test_over_limit_sheds_water_and_drops_setpoint():
    cmd = low_level_step(inputs(whole_home_current=95.0), FLAT)
    assert cmd.reason is Reason.OVER_LIMIT
    assert not cmd.wh_enabled
    assert cmd.hp_setpoint == 17.0


def test_unexpected_backup():
    cmd = low_level_step(inputs(backup_stage=3), FLAT)
    assert cmd.reason is Reason.UNEXPECTED_BACKUP and not cmd.wh_enabled


@pytest.mark.parametrize("t_out,stage", [(0.0, 2), (-9.4, 3), (-15.0, 3), (-15.1, 4)])
def test_defrost_stage_thresholds(t_out, stage):
    assert defrost_stage(t_out) == stage


def test_defrost_predicted_when_supply_falls_below_return():
    cmd = low_level_step(inputs(supply_temps=(19.0,) * N_LAGS, t_out=-5.0), FLAT)
    assert cmd.reason is Reason.DEFROST
    assert cmd.hp_setpoint == 21.0


def test_deep_cold_defrost_also_drops_setpoint():
    cmd = low_level_step(inputs(supply_temps=(19.0,) * N_LAGS, t_out=-18.0), FLAT)
    assert cmd.reason is Reason.DEFROST_STAGE3
    assert cmd.hp_setpoint == 17.0


def test_no_defrost_prediction_with_compressor_off():
    imminent, _ = predict_defrost(FLAT, inputs(supply_temps=(10.0,) * N_LAGS, hp_on=False))
    assert not imminent


def test_efficiency_rule_caps_water_setpoint():
    cmd = low_level_step(inputs(water_flow_active=True, t_w=52.0, hl_water_setpoint=55.0), FLAT)
    assert cmd.reason is Reason.EFFICIENCY
    assert cmd.wh_setpoint == 49.0


def test_out_of_range_setpoint_clamped():
    cmd = low_level_step(inputs(hl_air_setpoint=25.0), FLAT)
    assert cmd.reason is Reason.CLAMPED and cmd.hp_setpoint == 23.0


def test_rule_priority_over_limit_first():
    cmd = low_level_step(inputs(whole_home_current=120.0, backup_stage=4, supply_temps=(0.0,) * N_LAGS), FLAT)
    assert cmd.reason is Reason.OVER_LIMIT


@given(st.floats(0, 200), st.sampled_from([0, 2, 3, 4]), st.booleans(), st.floats(30, 60),
       st.floats(-30, 10), st.floats(15, 25))
def test_exactly_one_reason_and_setpoint_in_range(amps, stage, flow, tw, t_out, air):
    cmd = low_level_step(inputs(whole_home_current=amps, backup_stage=stage, water_flow_active=flow, t_w=tw,
                                t_out=t_out, hl_air_setpoint=air), FLAT)
    assert isinstance(cmd.reason, Reason)
    if amps > 90.0:
        assert cmd.reason is Reason.OVER_LIMIT and not cmd.wh_enabled


def test_fit_supply_ar_recovers_coefficients():
    rng = np.random.default_rng(0)
    true = np.zeros(N_LAGS)
    true[0], true[1] = 1.3, -0.4
    y = list(rng.normal(30, 1, N_LAGS))
    for _ in range(2000):
        y.append(float(true @ np.array(y[-N_LAGS:][::-1])) + 30 * 0.1 + rng.normal(0, 0.05))
    pred = fit_supply_ar(y)
    assert pred.coeffs[0] == pytest.approx(1.3, abs=0.1)
    assert pred.coeffs[1] == pytest.approx(-0.4, abs=0.1)


def test_fit_supply_ar_needs_history():
    with pytest.raises(ValueError):
        fit_supply_ar(np.ones(50))


def test_controller_holds_lowered_setpoint():
    ctl = LowLevelController(FLAT, LowLevelConfig(hold_steps=3))
    for _ in range(N_LAGS):
        ctl.observe_supply(35.0)
    assert ctl.step(inputs(whole_home_current=95.0)).reason is Reason.OVER_LIMIT
    reasons = [ctl.step(inputs()).reason for _ in range(4)]
    assert reasons == [Reason.HOLD, Reason.HOLD, Reason.HOLD, Reason.NONE]


def test_controller_repeats_last_command_when_stale():
    ctl = LowLevelController(FLAT)
    first = ctl.step(inputs())
    cmd = ctl.step(inputs(age_seconds=120.0, hl_air_setpoint=19.0))
    assert cmd.reason is Reason.STALE
    assert cmd.hp_setpoint == first.hp_setpoint
    assert ctl.stale_steps == 1


def test_controller_log(tmp_path):
    ctl = LowLevelController(FLAT)
    ctl.step(inputs(), timestamp="2023-01-01T00:00:00")
    ctl.write_log(tmp_path / "ll.csv")
    lines = (tmp_path / "ll.csv").read_text().splitlines()
    assert lines[0].startswith("timestamp") and lines[1].endswith("none")
