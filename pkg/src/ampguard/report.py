"""Run summaries, comparison tables and SVG plots built from traces."""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .devices import TripCurve
from .sim.metrics import LIMITS, score
from .sim.trace import Trace

SUPPLY_MIN_C = 36.6
VOLTAGE = 240.0


def atomic_write(path: str | Path, data: str | bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _kwh(current: np.ndarray, step_seconds: float) -> float:
    return float(np.sum(current) * VOLTAGE / 1000.0 * step_seconds / 3600.0)


def _switches(on: np.ndarray) -> int:
    on = np.asarray(on, dtype=int)
    return int(np.count_nonzero(np.diff(on)))


def summarize(trace: Trace, curve: TripCurve = TripCurve()) -> dict[str, float]:
    """Flat key-value summary; every entry is computed from the trace alone."""
    m = score(trace["i_total"], trace.step_seconds, curve)
    five = trace.five_minute()
    dt_min = trace.step_seconds / 60.0
    out = dict(m.as_dict())
    out.update({
        "excursions_5min_over_100a": float(np.count_nonzero(five > 100.0)),
        "excursions_5min_over_115a": float(np.count_nonzero(five > 115.0)),
        "mean_t_in_c": float(np.mean(trace["t_in"])),
        "mean_t_w_c": float(np.mean(trace["t_w"])),
        "minutes_t_w_below_36_6": float(np.count_nonzero(trace["t_w"] < SUPPLY_MIN_C) * dt_min),
        "energy_hp_kwh": _kwh(trace["i_hp"], trace.step_seconds),
        "energy_wh_kwh": _kwh(trace["i_wh"], trace.step_seconds),
        "energy_ev_kwh": _kwh(trace["i_ev"], trace.step_seconds),
        "energy_uncontrolled_kwh": _kwh(trace["i_uncontrolled"], trace.step_seconds),
        "energy_total_kwh": _kwh(trace["i_total"], trace.step_seconds),
        "ev_switches": float(_switches(trace["ev_on"])),
        "defrost_cycles": float(len(trace.defrost_onsets())),
        "override_steps": float(np.count_nonzero(trace["override_reason"] != "none")),
    })
    return out


def metrics_table(runs: dict[str, dict[str, float]], limits=LIMITS) -> str:
    """Markdown table of the per-limit rows, one column pair per run."""
    names = list(runs)
    head = "| limit | metric | " + " | ".join(names) + " |"
    sep = "|---|---|" + "---|" * len(names)
    lines = [head, sep]
    fields = [("total_minutes", "total minutes"), ("episodes_over_10min", "episodes > 10 min"),
              ("mean_episode_minutes", "mean episode min"), ("episodes_per_day", "episodes/day")]
    for lim in limits:
        for key, label in fields:
            vals = [runs[n][f"limit_{int(lim)}.{key}"] for n in names]
            lines.append(f"| {int(lim)} A | {label} | " + " | ".join(f"{v:.2f}" for v in vals) + " |")
    return "\n".join(lines)


def comfort_table(runs: dict[str, dict[str, float]]) -> str:
    keys = [("mean_t_in_c", "mean indoor temperature, C"), ("mean_t_w_c", "mean tank temperature, C"),
            ("minutes_t_w_below_36_6", "minutes tank below 36.6 C"), ("energy_total_kwh", "energy total, kWh"),
            ("energy_hp_kwh", "heat pump, kWh"), ("energy_wh_kwh", "water heater, kWh"),
            ("energy_ev_kwh", "EV, kWh"), ("max_average_a", "max 5-min average, A"),
            ("excursions_5min_over_100a", "5-min steps over 100 A"), ("trips", "trip verdicts")]
    names = list(runs)
    lines = ["| quantity | " + " | ".join(names) + " |", "|---|" + "---|" * len(names)]
    for key, label in keys:
        lines.append(f"| {label} | " + " | ".join(f"{runs[n][key]:.2f}" for n in names) + " |")
    return "\n".join(lines)


def render_report(title: str, runs: dict[str, dict[str, float]], config_hash: str, notes: list[str] = ()) -> str:
    parts = [f"# {title}", "", f"config hash: `{config_hash}`", ""]
    parts += [f"- {n}" for n in notes]
    if notes:
        parts.append("")
    parts += ["## Current-limit violations (5-minute averages)", "", metrics_table(runs), "",
              "## Comfort and energy", "", comfort_table(runs), ""]
    return "\n".join(parts)


def write_metrics(path: str | Path, summary: dict[str, float], config_hash: str):
    atomic_write(path, json.dumps({"config_hash": config_hash, **summary}, indent=2, sort_keys=True) + "\n")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def current_plot(trace: Trace, path: str | Path, curve: TripCurve = TripCurve(), title: str = ""):
    """5-minute average current over time with the breaker zones shaded."""
    plt = _figure()
    five = trace.five_minute()
    days = np.arange(five.size) * 5.0 / 1440.0
    fig, ax = plt.subplots(figsize=(10, 3.5))
    top = max(130.0, float(five.max()) + 5.0) if five.size else 130.0
    r = curve.rated
    ax.axhspan(curve.undesirable_from * r, r, color="gold", alpha=0.25, label="undesirable")
    ax.axhspan(r, curve.boundaries[-1][0] * r, color="orange", alpha=0.25, label="unsafe if sustained")
    ax.axhspan(curve.boundaries[-1][0] * r, top, color="red", alpha=0.2, label="trip likely")
    ax.plot(days, five, lw=0.6, color="black")
    ax.set_xlabel("day")
    ax.set_ylabel("whole-home current, A (5-min mean)")
    ax.set_ylim(0, top)
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    atomic_write(path, _svg(fig))
    plt.close(fig)


def distribution_plot(traces: dict[str, Trace], path: str | Path):
    """Box plots of the 5-minute average current per run."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.boxplot([t.five_minute() for t in traces.values()], whis=(1, 99), showfliers=True)
    ax.set_xticks(range(1, len(traces) + 1), list(traces))
    ax.set_ylabel("whole-home current, A (5-min mean)")
    ax.axhline(100.0, color="red", lw=0.8, ls="--")
    fig.tight_layout()
    atomic_write(path, _svg(fig))
    plt.close(fig)


def compare(a: dict[str, float], b: dict[str, float]) -> dict[str, float]:
    """b minus a for every shared key."""
    return {k: b[k] - a[k] for k in a if k in b}
