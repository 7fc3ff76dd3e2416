from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ar1, synthetic_weather

from ampguard.forecast import (ExogForecastModel, KernelRidge, TrainingError, UncontrolledProfile,
                               WaterDrawHistory, WeatherPoint, ar_design, default_lambda, fit_ar_errors,
                               fit_exog_model, full_forecast, pessimize, select_ar_model, uncontrolled_quantiles,
                               water_scenarios, weather_features)


@pytest.fixture(scope="module")
def exog_setup():
    n = 1500
    pts = synthetic_weather(n)
    base = np.array([1.0 - 0.05 * p.t_out + 0.002 * p.ghi for p in pts])
    w = base + ar1(n)
    model, diag = fit_exog_model(pts, w, memories=range(1, 7))
    return pts, w, model, diag


def test_weather_features_layout():
    X = weather_features([WeatherPoint(6.0, -3.0, 2.0, 100.0)])
    np.testing.assert_allclose(X[0], [1.0, 0.0, -3.0, 2.0, 100.0], atol=1e-12)


def test_weather_point_validation():
    with pytest.raises(ValueError):
        WeatherPoint(24.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        WeatherPoint(1.0, 0.0, -1.0, 0.0)


def test_kernel_ridge_fits_smooth_function():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, (300, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
    kr = KernelRidge(ridge=1e-6).fit(X, y)
    Xt = rng.uniform(-1.5, 1.5, (50, 2))
    assert np.max(np.abs(kr.predict(Xt) - (np.sin(Xt[:, 0]) + 0.5 * Xt[:, 1]))) < 0.05


def test_kernel_ridge_round_trip():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 3))
    kr = KernelRidge().fit(X, X[:, 0])
    kr2 = KernelRidge.from_dict(kr.to_dict())
    np.testing.assert_array_equal(kr.predict(X), kr2.predict(X))


def test_kernel_ridge_rejects_nonfinite():
    with pytest.raises(TrainingError):
        KernelRidge().fit(np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))


def test_ar_design_targets():
    e = np.arange(10.0)
    X, y = ar_design(e, lead=2, memory=3)
    np.testing.assert_array_equal(X[0], [1, 0, 1, 2])
    assert y[0] == 5.0
    assert len(y) == 10 - 3 - 2


def test_ar_fit_recovers_coefficient():
    e = ar1(5000, phi=0.8, seed=5)
    m = fit_ar_errors(e, lead=0, memory=1, val_frac=0)
    assert m.beta[1] == pytest.approx(0.8, abs=0.03)
    assert abs(m.beta[0]) < 0.05


def test_select_ar_prefers_lowest_validation_spread():
    e = ar1(2000, seed=6)
    best = select_ar_model(e, lead=0, memories=range(1, 5))
    sig = [fit_ar_errors(e, 0, m).sigma for m in range(1, 5)]
    assert best.sigma == pytest.approx(min(sig))


def test_ar_series_too_short():
    with pytest.raises(TrainingError):
        fit_ar_errors(np.zeros(4), lead=2, memory=3)


def test_correction_reduces_one_step_rmse(exog_setup):
    pts, w, model, _ = exog_setup
    n0 = 1000 + model.max_memory
    resid = w - model.open_loop.predict(weather_features(pts))
    err_ol, err_cor = [], []
    for k in range(n0, len(w)):
        fc = full_forecast(model, resid[:k], pts[k:k + 1])
        err_ol.append(w[k] - fc.open_loop[0])
        err_cor.append(w[k] - fc.values[0])
    rmse = lambda e: float(np.sqrt(np.mean(np.square(e))))  # noqa: E731
    assert rmse(err_cor) < rmse(err_ol)


def test_leads_past_horizon_equal_open_loop(exog_setup):
    pts, w, model, _ = exog_setup
    resid = w - model.open_loop.predict(weather_features(pts))
    fc = full_forecast(model, resid[:1200], pts[1200:1236])
    assert fc.corrected
    assert np.array_equal(fc.values[12:], fc.open_loop[12:])
    assert not np.array_equal(fc.values[:12], fc.open_loop[:12])


def test_short_error_history_falls_back(exog_setup):
    pts, _, model, _ = exog_setup
    fc = full_forecast(model, [], pts[:20])
    assert not fc.corrected
    assert np.array_equal(fc.values, fc.open_loop)


def test_model_json_round_trip(exog_setup, tmp_path):
    pts, _, model, _ = exog_setup
    model.save(tmp_path / "m.json")
    m2 = ExogForecastModel.load(tmp_path / "m.json")
    X = weather_features(pts[:30])
    np.testing.assert_array_equal(model.open_loop.predict(X), m2.open_loop.predict(X))
    assert [a.beta for a in m2.ar_models] == [a.beta for a in model.ar_models]


@pytest.mark.parametrize("t,lam", [(-20.0, 1.0), (-10.01, 1.0), (-10.0, 1.5), (5.0, 1.5)])
def test_lambda_rule(t, lam):
    assert default_lambda(t) == lam


def test_pessimize_applies_lambda_per_step():
    f = np.array([2.0, 2.0, 2.0])
    out = pessimize(f, [0.5, 0.4], t_out=[-15.0, -5.0, -12.0])
    # sigma held at its last value beyond the known leads
    np.testing.assert_allclose(out, [2.0 - 1.0 * 0.5, 2.0 - 1.5 * 0.4, 2.0 - 1.0 * 0.4])


def test_pessimize_explicit_schedule_length_checked():
    with pytest.raises(ValueError):
        pessimize([1.0, 2.0], [0.1], lambda_schedule=[1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.floats(0, 2), st.floats(-30, 10))
def test_pessimize_never_raises_forecast(vals, sig, t):
    out = pessimize(vals, [sig], t_out=[t] * len(vals))
    assert np.all(out <= np.asarray(vals) + 1e-12)


def _history(days=10, seed=0):
    rng = np.random.default_rng(seed)
    start = datetime(2023, 1, 1)
    profile = np.where(np.isin(np.arange(24), [7, 8, 19, 20]), 2.0, 0.1)
    vals = np.concatenate([profile * rng.uniform(0.5, 1.5, 24) for _ in range(days)])
    return WaterDrawHistory(start, vals)


def test_water_scenarios_pick_best_matching_days():
    hist = _history()
    now = hist.start + timedelta(days=9, hours=6)
    sc = water_scenarios(hist, now, s=3, horizon=36)
    assert sc.scenarios.shape == (3, 36)
    assert list(sc.maes) == sorted(sc.maes)
    assert not sc.padded


def test_water_scenarios_hold_hourly_values():
    hist = _history()
    now = hist.start + timedelta(days=9, hours=6)
    sc = water_scenarios(hist, now, s=1, horizon=24)
    day = sc.days_back[0]
    idx = hist.index_of(now) - 24 * day
    np.testing.assert_array_equal(sc.scenarios[0, :12], hist.values[idx])
    np.testing.assert_array_equal(sc.scenarios[0, 12:], hist.values[idx + 1])


def test_water_scenarios_pad_without_history():
    hist = WaterDrawHistory(datetime(2023, 1, 1), np.zeros(5))
    sc = water_scenarios(hist, datetime(2023, 1, 1, 4), s=4, horizon=10)
    assert sc.padded and sc.s == 4
    assert not sc.scenarios.any()


def test_water_history_retention():
    hist = WaterDrawHistory(datetime(2023, 1, 1), np.zeros(0), retention_days=2)
    for _ in range(100):
        hist.append(1.0)
    assert hist.values.size == 72
    assert hist.start == datetime(2023, 1, 1) + timedelta(hours=28)


def test_uncontrolled_quantiles_fill_empty_hours():
    hours = np.repeat(np.arange(24), 50)
    cur = np.tile(np.linspace(0, 10, 50), 24)
    keep = hours != 5
    prof = uncontrolled_quantiles(cur[keep], hours[keep])
    assert prof.interpolated_hours == (5,)
    assert prof.at(5.5) == pytest.approx(prof.at(4))
    assert prof.at(12) == pytest.approx(np.quantile(np.linspace(0, 10, 50), 0.99))


def test_uncontrolled_profile_validation():
    with pytest.raises(ValueError):
        UncontrolledProfile((1.0,) * 23)
