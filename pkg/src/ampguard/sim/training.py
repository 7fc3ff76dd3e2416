"""Learning the controller's models from a month of ordinary operation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..forecast import (ExogForecastModel, UncontrolledProfile, WaterDrawHistory, WeatherPoint, fit_exog_model,
                        uncontrolled_quantiles)
from ..lowlevel import DefrostPredictor, fit_supply_ar
from ..thermal import (IdentificationConfig, effective_boundary_temp, identify, invert_for_w,
                       overnight_samples, read_params, write_params)
from .loop import HL_EVERY, ControllerArtifacts, SimConfig, run_closed_loop
from .metrics import block_average
from .trace import Trace
from .weather import COLD_SNAP_START, WeatherTrace, synthetic_winter

log = logging.getLogger(__name__)

ARTIFACT_FILES = ("thermal.txt", "exog.json", "uncontrolled.json", "water.json", "defrost.json")


@dataclass(frozen=True)
class TrainingConfig:
    days: int = 28
    seed: int = 11
    weather_seed: int = 404
    end: datetime = COLD_SNAP_START
    mean_temp: float = -5.0
    night_excitation: float = 1.5  # half-range of random overnight set-points, degC
    exog_memories: int = 12


def training_weather(cfg: TrainingConfig) -> WeatherTrace:
    rng = np.random.default_rng(cfg.weather_seed)
    means = cfg.mean_temp + np.cumsum(rng.normal(0.0, 1.2, cfg.days)).clip(-6, 6)
    return synthetic_winter(cfg.days, cfg.weather_seed, cfg.end - timedelta(days=cfg.days), means)


def excitation_schedule(weather: WeatherTrace, cfg: TrainingConfig) -> np.ndarray:
    """Baseline set-points with random overnight steps so identification sees transients."""
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(weather)
    out = np.empty(n)
    level = 20.0
    for i in range(n):
        t = weather.time(i)
        if 6 <= t.hour < 22:
            out[i] = 21.0
            continue
        if t.minute == 0 and rng.random() < 0.5:
            level = 20.0 + rng.uniform(-cfg.night_excitation, cfg.night_excitation)
        out[i] = level
    return out


def generate_training_data(cfg: TrainingConfig = TrainingConfig()) -> tuple[Trace, WeatherTrace]:
    weather = training_weather(cfg)
    sim = SimConfig(seed=cfg.seed, days=cfg.days, controller="baseline", weather=weather,
                    air_schedule=excitation_schedule(weather, cfg))
    return run_closed_loop(sim), weather


def five_minute_rows(trace: Trace, weather: WeatherTrace) -> list[dict]:
    """Rows (timestamp, t_in at block start, mean t_out, mean q_hp) per 5 minutes."""
    q = block_average(trace["q_hp"], HL_EVERY)
    t_out = block_average(trace["t_out"], HL_EVERY)
    ends = trace["t_in"][HL_EVERY - 1::HL_EVERY]
    rows = []
    for j in range(1, q.size):
        rows.append({"timestamp": trace.time(j * HL_EVERY), "t_in": float(ends[j - 1]),
                     "t_out": float(t_out[j]), "q_hp": float(q[j])})
    return rows


def fit_artifacts(trace: Trace, weather: WeatherTrace, cfg: TrainingConfig = TrainingConfig(),
                  id_cfg: IdentificationConfig = IdentificationConfig()) -> tuple[ControllerArtifacts, dict]:
    rows = five_minute_rows(trace, weather)
    params = identify(overnight_samples(rows, id_cfg))
    log.info("identified r_out=%.3f r_m=%.3f a=%.4f", params.r_out, params.r_m, params.a)

    t_in = np.array([r["t_in"] for r in rows])
    t_out = np.array([r["t_out"] for r in rows])
    q = np.array([r["q_hp"] for r in rows])
    theta = effective_boundary_temp(t_out[:-1], params)
    w = invert_for_w(t_in[:-1], t_in[1:], theta, q[:-1], params)
    points = []
    for r in rows[:-1]:
        i = weather.index_at(r["timestamp"])
        ts = r["timestamp"]
        points.append(WeatherPoint(ts.hour + ts.minute / 60.0, r["t_out"], float(weather.wind[i]),
                                   float(weather.ghi[i])))
    exog, diag = fit_exog_model(points, w, memories=range(1, cfg.exog_memories + 1))

    unc = block_average(trace["i_uncontrolled"], HL_EVERY)
    hours = np.array([trace.time(j * HL_EVERY).hour for j in range(unc.size)])
    profile = uncontrolled_quantiles(unc, hours)

    hourly = block_average(trace["draw_kw"], 120)
    water = WaterDrawHistory(trace.start, hourly)

    predictor = fit_supply_ar(trace["supply_temp"])
    diag = {**diag, "thermal": asdict(params), "a": params.a, "q99": list(profile.q_alpha),
            "defrost_ill_conditioned": predictor.ill_conditioned}
    return ControllerArtifacts(params, exog, profile, water, predictor), diag


def train(cfg: TrainingConfig = TrainingConfig()) -> tuple[ControllerArtifacts, dict]:
    trace, weather = generate_training_data(cfg)
    return fit_artifacts(trace, weather, cfg)


def save_artifacts(art: ControllerArtifacts, directory: str | Path):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_params(art.params, d / "thermal.txt")
    art.exog.save(d / "exog.json")
    (d / "uncontrolled.json").write_text(json.dumps({"q_alpha": list(art.profile.q_alpha),
                                                     "alpha": art.profile.alpha}))
    (d / "water.json").write_text(json.dumps({"start": art.water.start.isoformat(),
                                              "values": art.water.values.tolist(),
                                              "retention_days": art.water.retention_days}))
    (d / "defrost.json").write_text(json.dumps({"coeffs": list(art.predictor.coeffs),
                                                "ill_conditioned": art.predictor.ill_conditioned}))


def load_artifacts(directory: str | Path) -> ControllerArtifacts:
    d = Path(directory)
    missing = [f for f in ARTIFACT_FILES if not (d / f).is_file()]
    if missing:
        raise FileNotFoundError(f"{d}: missing {', '.join(missing)}")
    unc = json.loads((d / "uncontrolled.json").read_text())
    water = json.loads((d / "water.json").read_text())
    dfr = json.loads((d / "defrost.json").read_text())
    return ControllerArtifacts(
        read_params(d / "thermal.txt"),
        ExogForecastModel.load(d / "exog.json"),
        UncontrolledProfile(tuple(unc["q_alpha"]), unc["alpha"]),
        WaterDrawHistory(datetime.fromisoformat(water["start"]), np.array(water["values"]),
                         water["retention_days"]),
        DefrostPredictor(tuple(dfr["coeffs"]), dfr["ill_conditioned"]),
    )
