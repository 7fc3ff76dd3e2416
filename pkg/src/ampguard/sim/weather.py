"""Weather traces: CSV ingestion and a built-in synthetic winter generator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..forecast import WeatherPoint

COLD_SNAP_START = datetime(2023, 12, 25)


@dataclass(frozen=True)
class WeatherTrace:
    start: datetime
    step_minutes: int
    t_out: np.ndarray
    wind: np.ndarray
    ghi: np.ndarray

    def __post_init__(self):
        n = len(self.t_out)
        if len(self.wind) != n or len(self.ghi) != n:
            raise ValueError("weather columns must have equal length")
        if n == 0:
            raise ValueError("empty weather trace")

    def __len__(self) -> int:
        return len(self.t_out)

    @property
    def days(self) -> float:
        return len(self) * self.step_minutes / 1440.0

    def time(self, i: int) -> datetime:
        return self.start + timedelta(minutes=self.step_minutes * i)

    def index_at(self, t: datetime) -> int:
        i = int((t - self.start) // timedelta(minutes=self.step_minutes))
        return min(max(i, 0), len(self) - 1)

    def point(self, i: int) -> WeatherPoint:
        i = min(max(i, 0), len(self) - 1)
        t = self.time(i)
        return WeatherPoint(t.hour + t.minute / 60.0, float(self.t_out[i]), float(self.wind[i]), float(self.ghi[i]))

    def points(self, i0: int, n: int) -> list[WeatherPoint]:
        return [self.point(i) for i in range(i0, i0 + n)]

    def slice_days(self, day0: float, days: float) -> "WeatherTrace":
        per_day = 1440 // self.step_minutes
        a, b = int(day0 * per_day), int((day0 + days) * per_day)
        return WeatherTrace(self.time(a), self.step_minutes, self.t_out[a:b], self.wind[a:b], self.ghi[a:b])

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["timestamp", "t_out", "wind", "ghi"])
            for i in range(len(self)):
                wr.writerow([self.time(i).isoformat(), f"{self.t_out[i]:.3f}", f"{self.wind[i]:.3f}",
                             f"{self.ghi[i]:.2f}"])


def read_weather_csv(path: str | Path) -> WeatherTrace:
    """Parse ``timestamp,t_out,wind,ghi`` rows at a fixed step."""
    times, cols = [], {"t_out": [], "wind": [], "ghi": []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", *cols} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain timestamp,t_out,wind,ghi")
        for lineno, rec in enumerate(reader, start=2):
            try:
                times.append(datetime.fromisoformat(rec["timestamp"]))
                for k in cols:
                    cols[k].append(float(rec[k]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if not all(math.isfinite(cols[k][-1]) for k in cols):
                raise ValueError(f"{path}:{lineno}: non-finite value")
    if len(times) < 2:
        raise ValueError(f"{path}: need at least two rows")
    step = times[1] - times[0]
    for lineno, (a, b) in enumerate(zip(times[:-1], times[1:]), start=3):
        if b - a != step:
            raise ValueError(f"{path}:{lineno}: irregular time step")
    minutes = int(step.total_seconds() // 60)
    if minutes <= 0 or 1440 % minutes:
        raise ValueError(f"{path}: step must divide a day evenly")
    return WeatherTrace(times[0], minutes, np.array(cols["t_out"]), np.array(cols["wind"]),
                        np.clip(np.array(cols["ghi"]), 0.0, None))


def synthetic_winter(days: int = 31, seed: int = 2023, start: datetime = COLD_SNAP_START,
                     daily_mean: np.ndarray | None = None, swing: float = 3.5,
                     step_minutes: int = 5) -> WeatherTrace:
    """Winter weather with a daily temperature swing, AR(1) weather noise,
    gusty wind and clear/overcast sun."""
    rng = np.random.default_rng(seed)
    per_day = 1440 // step_minutes
    n = days * per_day
    t = np.arange(n) * step_minutes / 60.0
    hour = (start.hour + start.minute / 60.0 + t) % 24
    if daily_mean is None:
        daily_mean = np.full(days, -5.0)
    # smooth day-to-day mean by interpolating between noon anchors
    anchors = np.arange(days) * 24.0 + 12.0
    base = np.interp(t, anchors, np.asarray(daily_mean, dtype=float))
    noise = np.zeros(n)
    phi = math.exp(-step_minutes / 180.0)
    eps = rng.normal(0.0, 0.6 * math.sqrt(1 - phi ** 2), n)
    for i in range(1, n):
        noise[i] = phi * noise[i - 1] + eps[i]
    t_out = base - swing * np.cos(2 * np.pi * (hour - 5.0) / 24.0) + noise

    cloud = np.repeat(rng.uniform(0.2, 1.0, days), per_day)
    sun = np.clip(np.sin(np.pi * (hour - 8.0) / 8.5), 0.0, None)  # winter day ~08:00-16:30
    ghi = 450.0 * sun * cloud

    wind = np.zeros(n)
    wphi = math.exp(-step_minutes / 120.0)
    weps = rng.normal(0.0, 1.5 * math.sqrt(1 - wphi ** 2), n)
    for i in range(1, n):
        wind[i] = wphi * wind[i - 1] + weps[i]
    wind = np.clip(3.5 + wind, 0.0, None)
    return WeatherTrace(start, step_minutes, t_out, wind, ghi)


def cold_snap(days: int = 31, seed: int = 2023, start: datetime = COLD_SNAP_START,
              low: float = -20.0) -> WeatherTrace:
    """A month of winter with a week-long cold snap whose coldest reading is ``low``."""
    d = np.arange(days, dtype=float)
    core = low + 4.0
    mean = np.interp(d, [0, 7, 11, 17, 21, days], [-4.0, -4.0, core, core, -6.0, -5.0])
    trace = synthetic_winter(days, seed, start, mean, swing=3.5)
    per_day = 1440 // trace.step_minutes
    depth = np.clip((-4.0 - mean) / (-4.0 - core), 0.0, 1.0)
    weight = np.repeat(depth, per_day)[: len(trace)]
    cold = weight >= 1.0
    shift = low - float(trace.t_out[cold].min())
    t_out = np.maximum(trace.t_out + shift * weight, low)
    return WeatherTrace(trace.start, trace.step_minutes, t_out, trace.wind, trace.ghi)
