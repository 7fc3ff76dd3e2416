"""Closed-loop house simulator: plant, occupants, weather, controllers and scoring."""

from .loop import ControllerArtifacts, EvScenario, MpcStackConfig, SimConfig, run_closed_loop
from .metrics import LIMITS, ViolationMetrics, score
from .plant import HpMode, PlantCommand, PlantConfig, PlantState, plant_step
from .trace import TRACE_COLUMNS, Trace, read_trace_csv
from .training import TrainingConfig, fit_artifacts, generate_training_data, load_artifacts, save_artifacts, train
from .weather import WeatherTrace, cold_snap, read_weather_csv, synthetic_winter

__all__ = [
    "ControllerArtifacts", "EvScenario", "HpMode", "LIMITS", "MpcStackConfig", "PlantCommand", "PlantConfig",
    "PlantState", "SimConfig", "TRACE_COLUMNS", "Trace", "TrainingConfig", "ViolationMetrics", "WeatherTrace",
    "cold_snap", "fit_artifacts", "generate_training_data", "load_artifacts", "plant_step", "read_trace_csv",
    "read_weather_csv", "run_closed_loop", "save_artifacts", "score", "synthetic_winter", "train",
]
