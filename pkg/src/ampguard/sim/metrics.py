"""Current-limit violation accounting on whole-home current traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..devices import TripCurve, Zone, ZoneTracker

LIMITS = (80.0, 90.0, 100.0, 110.0)


@dataclass(frozen=True)
class LimitStats:
    limit: float
    total_minutes: float
    episodes: int
    long_episodes: int  # longer than 10 minutes
    mean_episode_minutes: float
    episodes_per_day: float


@dataclass(frozen=True)
class ViolationMetrics:
    per_limit: dict[float, LimitStats]
    days: float
    max_average: float
    trips: int
    worst_zone: Zone
    zone_minutes: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, limit: float) -> LimitStats:
        return self.per_limit[float(limit)]

    def as_dict(self) -> dict[str, float]:
        out: dict[str, float] = {"days": self.days, "max_average_a": self.max_average,
                                 "trips": float(self.trips), "worst_zone": float(int(self.worst_zone))}
        for lim, st in self.per_limit.items():
            tag = f"limit_{int(lim)}"
            out[f"{tag}.total_minutes"] = st.total_minutes
            out[f"{tag}.episodes"] = float(st.episodes)
            out[f"{tag}.episodes_over_10min"] = float(st.long_episodes)
            out[f"{tag}.mean_episode_minutes"] = st.mean_episode_minutes
            out[f"{tag}.episodes_per_day"] = st.episodes_per_day
        for name, minutes in self.zone_minutes.items():
            out[f"zone_minutes.{name}"] = minutes
        return out


def block_average(values: np.ndarray, samples: int) -> np.ndarray:
    """Means over consecutive blocks of ``samples`` (a trailing partial block is dropped)."""
    v = np.asarray(values, dtype=float)
    n = v.size // samples
    return v[: n * samples].reshape(n, samples).mean(axis=1)


def _runs(mask: np.ndarray) -> list[int]:
    """Lengths of consecutive True runs."""
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    d = np.diff(padded)
    return list(np.flatnonzero(d == -1) - np.flatnonzero(d == 1))


def excursions(avg: np.ndarray, limit: float) -> int:
    return len(_runs(np.asarray(avg) > limit))


def score(current: np.ndarray, step_seconds: float = 30.0, curve: TripCurve = TripCurve(),
          average_minutes: float | None = 5.0, limits=LIMITS) -> ViolationMetrics:
    """Episode statistics per current limit plus trip-curve verdicts.

    With ``average_minutes`` set, the trace is first reduced to block means of
    that length; ``None`` scores the raw samples.
    """
    i = np.asarray(current, dtype=float)
    if average_minutes:
        per = int(round(average_minutes * 60.0 / step_seconds))
        series = block_average(i, per)
        step_min = average_minutes
    else:
        series = i
        step_min = step_seconds / 60.0
    days = i.size * step_seconds / 86400.0
    stats = {}
    for lim in limits:
        runs = [r * step_min for r in _runs(series > lim)]
        total = float(sum(runs))
        stats[float(lim)] = LimitStats(
            float(lim), total, len(runs), sum(1 for r in runs if r > 10.0 + 1e-9),
            total / len(runs) if runs else 0.0, len(runs) / days if days else 0.0)
    tracker = ZoneTracker(curve, step_min)
    trips, worst = 0, Zone.NORMAL
    zone_minutes = {z.name.lower(): 0.0 for z in Zone}
    was_trip = False
    for x in series:
        verdict = tracker.update(float(x))
        zone_minutes[verdict.zone.name.lower()] += step_min
        worst = max(worst, verdict.zone)
        if verdict.trip and not was_trip:
            trips += 1
        was_trip = verdict.trip
    return ViolationMetrics(stats, days, float(series.max()) if series.size else 0.0, trips, worst, zone_minutes)


@dataclass(frozen=True)
class DefrostPrediction:
    onsets: int
    predicted: int
    alarms: int  # separate alarm episodes
    false_alarms: int  # episodes with no onset within the lookahead

    @property
    def hit_rate(self) -> float:
        return self.predicted / self.onsets if self.onsets else 1.0

    @property
    def false_positive_rate(self) -> float:
        return self.false_alarms / self.alarms if self.alarms else 0.0


def defrost_prediction(onsets: np.ndarray, alarm: np.ndarray, lookahead: int = 10) -> DefrostPrediction:
    """Score alarms against defrost onsets.

    An onset at row i counts as predicted when an alarm was raised in rows
    [i - lookahead, i - 1], i.e. at least one step before the defrost shows.
    An alarm episode (a run of alarmed rows) is false when no onset falls
    between its start and ``lookahead`` rows past its end.
    """
    alarm = np.asarray(alarm, dtype=bool)
    onsets = np.asarray(onsets, dtype=int)
    hit = sum(bool(alarm[max(0, i - lookahead):i].any()) for i in onsets)
    edges = np.diff(np.r_[0, alarm.astype(int), 0])
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    false = 0
    for a, e in zip(starts, ends):
        if not np.any((onsets >= a) & (onsets <= e + lookahead)):
            false += 1
    return DefrostPrediction(int(onsets.size), int(hit), int(starts.size), false)
