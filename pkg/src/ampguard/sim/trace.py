"""Closed-loop trace container and its CSV form."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .metrics import block_average

TRACE_COLUMNS = ("timestamp", "t_out", "t_in", "t_w", "i_total", "i_hp", "i_wh", "i_ev", "i_uncontrolled",
                 "backup_stage", "hp_mode", "wh_on", "ev_on", "setpoint_air", "setpoint_water",
                 "override_reason")
_TEXT = {"hp_mode", "override_reason"}


@dataclass
class Trace:
    start: datetime
    step_seconds: float
    columns: dict[str, np.ndarray]
    events: list[str] = field(default_factory=list)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(TRACE_COLUMNS) - {"timestamp"} - set(self.columns)
        if missing:
            raise ValueError(f"trace lacks columns {sorted(missing)}")
        n = {len(v) for v in self.columns.values()}
        if len(n) > 1:
            raise ValueError("trace columns differ in length")

    def __len__(self) -> int:
        return len(self.columns["i_total"])

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.columns:
            return self.columns[name]
        return self.extras[name]

    @property
    def days(self) -> float:
        return len(self) * self.step_seconds / 86400.0

    def time(self, i: int) -> datetime:
        return self.start + timedelta(seconds=self.step_seconds * i)

    def five_minute(self, name: str = "i_total") -> np.ndarray:
        return block_average(self[name], int(round(300.0 / self.step_seconds)))

    def defrost_onsets(self) -> np.ndarray:
        mode = self.columns["hp_mode"]
        d = mode == "defrost"
        return np.flatnonzero(d[1:] & ~d[:-1]) + 1

    def to_csv(self, path: str | Path, extra_columns: tuple[str, ...] = ()):
        """Write the standard columns, then any named extras (floats) after them."""
        names = TRACE_COLUMNS[1:] + tuple(extra_columns)
        cols = [self[c] for c in names]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(TRACE_COLUMNS + tuple(extra_columns))
            for i in range(len(self)):
                row = [self.time(i).isoformat()]
                for name, col in zip(names, cols):
                    v = col[i]
                    if name in _TEXT:
                        row.append(str(v))
                    elif col.dtype.kind in "bi":
                        row.append(int(v))
                    else:
                        row.append(f"{v:.4f}")
                wr.writerow(row)


def read_trace_csv(path: str | Path) -> Trace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[: len(TRACE_COLUMNS)]) != TRACE_COLUMNS:
            raise ValueError(f"{path}: header does not match the trace schema")
        rows = list(reader)
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two rows")
    names = tuple(header[1:])
    times = []
    data: dict[str, list] = {c: [] for c in names}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
        try:
            times.append(datetime.fromisoformat(row[0]))
            for name, v in zip(names, row[1:]):
                data[name].append(v if name in _TEXT else float(v))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if not all(math.isfinite(data[n][-1]) for n in data if n not in _TEXT):
            raise ValueError(f"{path}:{lineno}: non-finite value")
    step = (times[1] - times[0]).total_seconds()
    for lineno, (a, b) in enumerate(zip(times[:-1], times[1:]), start=3):
        if (b - a).total_seconds() != step:
            raise ValueError(f"{path}:{lineno}: irregular time step")
    cols, extras = {}, {}
    for name, vals in data.items():
        if name not in TRACE_COLUMNS:
            extras[name] = np.array(vals, dtype=float)
            continue
        if name in _TEXT:
            cols[name] = np.array(vals, dtype=object)
        elif name in ("backup_stage", "wh_on", "ev_on"):
            cols[name] = np.array(vals, dtype=int)
        else:
            cols[name] = np.array(vals, dtype=float)
    return Trace(times[0], step, cols, extras=extras)
