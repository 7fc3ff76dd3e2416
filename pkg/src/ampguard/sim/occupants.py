"""Occupant hot-water draws and uncontrolled appliance currents."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STEPS_PER_DAY = 2880  # 30-second resolution


@dataclass(frozen=True)
class DrawEvent:
    start_minute: float
    minutes: float
    flow_lpm: float  # hot water leaving the tank, litres/minute

    @property
    def litres(self) -> float:
        return self.minutes * self.flow_lpm


def _person_day(rng: np.random.Generator) -> list[DrawEvent]:
    events = []
    if rng.random() < 0.9:
        morning = rng.random() < 0.6
        start = rng.normal(7.0, 0.6) if morning else rng.normal(21.0, 1.0)
        minutes = rng.uniform(10.0, 12.0)
        litres = rng.normal(45.0, 5.0)
        events.append(DrawEvent(60.0 * (start % 24), minutes, max(20.0, litres) / minutes))
    for _ in range(rng.poisson(5)):
        hour = rng.choice([7, 8, 12, 13, 17, 18, 19, 20, 21, 22])
        events.append(DrawEvent(60.0 * hour + rng.uniform(0, 60), rng.uniform(0.5, 1.5), rng.uniform(3.0, 6.0)))
    return events


def _household_day(rng: np.random.Generator) -> list[DrawEvent]:
    events = []
    if rng.random() < 0.6:  # dishwasher
        events.append(DrawEvent(60.0 * rng.uniform(19.5, 22.0), 30.0, 0.5))
    if rng.random() < 0.4:  # laundry
        events.append(DrawEvent(60.0 * rng.uniform(9.0, 17.0), 20.0, 1.5))
    return events


@dataclass(frozen=True)
class DrawLibrary:
    """Daily hot-water profiles per person plus household appliances."""

    person_days: tuple[tuple[DrawEvent, ...], ...]
    household_days: tuple[tuple[DrawEvent, ...], ...]

    @classmethod
    def generate(cls, seed: int, size: int = 40) -> "DrawLibrary":
        rng = np.random.default_rng(seed)
        return cls(tuple(tuple(_person_day(rng)) for _ in range(size)),
                   tuple(tuple(_household_day(rng)) for _ in range(size)))

    def day_flows(self, rng: np.random.Generator, occupants: int) -> np.ndarray:
        """Hot-water flow (L/min) at 30-s resolution for one day."""
        flow = np.zeros(STEPS_PER_DAY)
        picks = [self.person_days[i] for i in rng.integers(0, len(self.person_days), occupants)]
        picks.append(self.household_days[rng.integers(0, len(self.household_days))])
        for events in picks:
            for ev in events:
                a = int(ev.start_minute * 2)
                b = a + max(1, int(round(ev.minutes * 2)))
                idx = np.arange(a, b) % STEPS_PER_DAY
                flow[idx] += ev.flow_lpm
        return flow


@dataclass(frozen=True)
class UncontrolledLoads:
    """Per-hour appliance model for current outside the controller's authority."""

    base: float = 1.5
    fridge: float = 1.2
    evening_lighting: float = 2.0
    cap: float = 40.0
    # (name, hours, probability per day, amps range, minutes range)
    appliances: tuple = (
        ("cooking", (17, 18), 0.7, (8.0, 14.0), (20.0, 45.0)),
        ("breakfast", (7,), 0.4, (5.0, 9.0), (5.0, 15.0)),
        ("kettle", (7, 10, 15, 20), 0.5, (5.0, 7.0), (3.0, 5.0)),
        ("dishwasher", (20, 21), 0.6, (4.0, 6.0), (50.0, 70.0)),
        ("dryer", (10, 11, 12, 13, 14, 15, 16), 0.08, (20.0, 23.0), (40.0, 55.0)),
        ("microwave", (12, 18, 19), 0.5, (5.0, 6.0), (2.0, 6.0)),
    )

    def day(self, rng: np.random.Generator) -> np.ndarray:
        minute = np.arange(STEPS_PER_DAY) / 2.0
        hour = minute / 60.0
        amps = np.full(STEPS_PER_DAY, self.base)
        phase = rng.uniform(0, 60)
        amps += self.fridge * (((minute + phase) % 60.0) < 20.0)
        amps += self.evening_lighting * ((hour >= 16.5) & (hour < 23.0))
        amps += rng.normal(0.0, 0.3, STEPS_PER_DAY).clip(-1.0, 1.0)
        for _, hours, p, (a_lo, a_hi), (m_lo, m_hi) in self.appliances:
            if rng.random() >= p:
                continue
            h = rng.choice(hours)
            start = int((60.0 * h + rng.uniform(0, 60)) * 2)
            length = int(rng.uniform(m_lo, m_hi) * 2)
            idx = np.arange(start, start + length) % STEPS_PER_DAY
            amps[idx] += rng.uniform(a_lo, a_hi)
        return np.clip(amps, 0.0, self.cap)


@dataclass
class OccupantModel:
    """Day-by-day generator of hot-water flow and uncontrolled current."""

    library: DrawLibrary
    occupants: int = 2
    loads: UncontrolledLoads = field(default_factory=UncontrolledLoads)

    def days(self, rng: np.random.Generator, n_days: int) -> tuple[np.ndarray, np.ndarray]:
        flows = np.concatenate([self.library.day_flows(rng, self.occupants) for _ in range(n_days)])
        amps = np.concatenate([self.loads.day(rng) for _ in range(n_days)])
        return flows, amps
