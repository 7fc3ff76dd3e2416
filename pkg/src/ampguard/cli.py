"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 missing artifact, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from . import report
from .sim.loop import EvScenario, SimConfig, run_closed_loop
from .sim.trace import read_trace_csv
from .sim.training import (ARTIFACT_FILES, fit_artifacts, generate_training_data, load_artifacts,
                           save_artifacts)
from .sim.weather import WeatherTrace, cold_snap, read_weather_csv

log = logging.getLogger("ampguard")

EXIT_OK, EXIT_INPUT, EXIT_MISSING, EXIT_INTERNAL = 0, 2, 3, 4
TRAINING_EXTRAS = ("q_hp", "supply_temp", "draw_kw")


class MissingArtifact(Exception):
    pass


def _weather(spec: str, days: int) -> WeatherTrace:
    if spec == "coldsnap":
        return cold_snap(max(days, 31))
    return read_weather_csv(spec)


def _sim_config(rc: cfgmod.RunConfig, controller: str, seed: int) -> SimConfig:
    sb = rc.sim
    ev = None
    if sb.ev == "level2":
        ev = EvScenario()
    elif sb.ev not in (None, "none"):
        raise ValueError(f"unknown EV scenario {sb.ev!r}")
    return SimConfig(seed=seed, days=sb.days, controller=controller, weather=_weather(sb.weather, sb.days),
                     occupants=sb.occupants, library_seed=sb.library_seed, delay_prob=sb.delay_prob,
                     delay_seed=sb.delay_seed, ev=ev, plant=rc.plant, lowlevel=rc.lowlevel, mpc=rc.mpc,
                     legacy_defrost=sb.legacy_defrost)


def _artifacts(directory: str):
    d = Path(directory)
    for name in ARTIFACT_FILES:
        if not (d / name).is_file():
            raise MissingArtifact(f"missing artifact {d / name}; run `ampguard fit` first")
    return load_artifacts(d)


# ----------------------------------------------------------------- commands
def cmd_schema(args, rc) -> int:
    print(json.dumps(cfgmod.schema(), indent=2))
    return EXIT_OK


def cmd_gen_data(args, rc) -> int:
    tc = rc.training
    if args.days is not None:
        tc = replace(tc, days=args.days)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    trace, weather = generate_training_data(tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "training_trace.csv", lambda p: trace.to_csv(p, TRAINING_EXTRAS))
    _write_csv(out / "training_weather.csv", weather.to_csv)
    print(f"wrote {len(trace)} rows to {out / 'training_trace.csv'}")
    return EXIT_OK


def _write_csv(path: Path, writer):
    tmp = path.with_name(f".{path.name}.tmp")
    writer(tmp)
    tmp.replace(path)


def cmd_fit(args, rc) -> int:
    data = Path(args.data)
    trace_path, weather_path = data / "training_trace.csv", data / "training_weather.csv"
    for p in (trace_path, weather_path):
        if not p.is_file():
            raise ValueError(f"input file {p} not found")
    trace = read_trace_csv(trace_path)
    missing = [c for c in TRAINING_EXTRAS if c not in trace.extras]
    if missing:
        raise ValueError(f"{trace_path}: missing columns {', '.join(missing)}")
    weather = read_weather_csv(weather_path)
    art, diag = fit_artifacts(trace, weather, rc.training)
    out = Path(args.out or rc.artifacts_dir)
    save_artifacts(art, out)
    p = art.params
    print(f"thermal: r_out={p.r_out:.3f} r_m={p.r_m:.3f} C={p.c:.3f} a={p.a:.4f} w0={p.w0:.2f}")
    print(f"exogenous power: train RMSE {diag['train_rmse']:.2f} kW, held-out RMSE {diag['val_rmse']:.2f} kW")
    print(f"AR memories {diag['memories']}")
    print("uncontrolled q99 by hour: " + " ".join(f"{q:.1f}" for q in art.profile.q_alpha))
    print(f"artifacts written to {out}")
    return EXIT_OK


def _simulate_one(rc: cfgmod.RunConfig, controller: str, seed: int, out: Path, digest: str) -> dict:
    art = _artifacts(rc.artifacts_dir) if controller == "mpc" else None
    sim = _sim_config(rc, controller, seed)
    trace = run_closed_loop(sim, art)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trace.csv", trace.to_csv)
    summary = report.summarize(trace)
    notes = []
    if sim.ev is not None:
        soc = trace["ev_soc"]
        summary["ev_full_at_departures"] = float(_ev_full_at_departures(trace, sim.ev))
        summary["ev_final_soc_kwh"] = float(soc[-1])
        notes.append(f"EV charger switches: {int(summary['ev_switches'])}; "
                     f"full at every departure: {bool(summary['ev_full_at_departures'])}")
    report.write_metrics(out / "metrics.json", summary, digest)
    report.atomic_write(out / "report.md", report.render_report(f"{controller}, seed {seed}",
                                                                {controller: summary}, digest, notes))
    report.atomic_write(out / "events.log", "".join(e + "\n" for e in trace.events))
    report.current_plot(trace, out / "current.svg", title=f"{controller}, seed {seed}")
    report.distribution_plot({controller: trace}, out / "distribution.svg")
    return summary


def _ev_full_at_departures(trace, ev: EvScenario) -> bool:
    soc = trace["ev_soc"]
    cap = ev.model.capacity
    for i in range(1, len(trace)):
        t0, t1 = trace.time(i - 1), trace.time(i)
        h0 = t0.hour + t0.minute / 60.0 + t0.second / 3600.0
        h1 = t1.hour + t1.minute / 60.0 + t1.second / 3600.0
        if ev.plugged(h0) and not ev.plugged(h1) and soc[i - 1] < cap - 1e-6:
            return False
    return True


def cmd_simulate(args, rc) -> int:
    sb = rc.sim
    overrides = {k: v for k, v in (("days", args.days), ("weather", args.weather), ("delay_prob", args.delay_prob))
                 if v is not None}
    if args.ev is not None:
        overrides["ev"] = None if args.ev == "none" else args.ev
    rc = replace(rc, sim=replace(sb, **overrides))
    if args.artifacts:
        rc = replace(rc, artifacts_dir=args.artifacts)
    if args.controller == "mpc":
        _artifacts(rc.artifacts_dir)  # fail fast, before any worker starts
    seeds = args.seed or [rc.sim.seed]
    out = Path(args.out or rc.output_dir)
    digest = rc.digest()
    dirs = {s: out / (f"{args.controller}_seed{s}" if len(seeds) > 1 else args.controller) for s in seeds}
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = {s: pool.submit(_simulate_one, rc, args.controller, s, dirs[s], digest) for s in seeds}
            results = {s: f.result() for s, f in futs.items()}
    else:
        results = {s: _simulate_one(rc, args.controller, s, dirs[s], digest) for s in seeds}
    for s, summ in results.items():
        print(f"seed {s}: max 5-min {summ['max_average_a']:.1f} A, "
              f"5-min steps > 100 A: {int(summ['excursions_5min_over_100a'])}, "
              f"90 A episodes/day {summ['limit_90.episodes_per_day']:.2f}, "
              f"mean t_in {summ['mean_t_in_c']:.2f} C -> {dirs[s]}")
    return EXIT_OK


def cmd_compare(args, rc) -> int:
    a, b = read_trace_csv(args.trace_a), read_trace_csv(args.trace_b)
    names = (args.names or ["a", "b"])[:2]
    sa, sb = report.summarize(a), report.summarize(b)
    notes = []
    if abs(a.days - b.days) > 1e-9:
        notes.append(f"trace lengths differ ({a.days:.2f} vs {b.days:.2f} days); totals normalized per day")
        for s, t in ((sa, a), (sb, b)):
            for k in list(s):
                if k.endswith((".total_minutes", ".episodes_over_10min")) or k.startswith("energy_") \
                        or k.startswith("excursions_") or k == "minutes_t_w_below_36_6":
                    s[k] = s[k] / t.days
    delta = report.compare(sa, sb)
    out = Path(args.out)
    digest = rc.digest()
    runs = {names[0]: sa, names[1]: sb, f"{names[1]} - {names[0]}": delta}
    report.atomic_write(out / "comparison.md", report.render_report("comparison", runs, digest, notes))
    report.atomic_write(out / "comparison.json",
                        json.dumps({"config_hash": digest, names[0]: sa, names[1]: sb, "delta": delta},
                                   indent=2, sort_keys=True) + "\n")
    report.distribution_plot({names[0]: a, names[1]: b}, out / "distribution.svg")
    print(report.metrics_table(runs))
    for n in notes:
        print(n)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ampguard", description="Current-limit-aware home heating control.")
    p.add_argument("--config", help=f"JSON run configuration (default: ${cfgmod.ENV_VAR}, else built-in defaults)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("schema", help="print the configuration JSON schema").set_defaults(func=cmd_schema)

    g = sub.add_parser("gen-data", help="simulate a month of ordinary operation for training")
    g.add_argument("--out", required=True)
    g.add_argument("--days", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="fit thermal, forecast, load and defrost models")
    f.add_argument("--data", required=True, help="directory with training_trace.csv and training_weather.csv")
    f.add_argument("--out", help="artifact directory (default: config artifacts_dir)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a closed-loop simulation")
    s.add_argument("--controller", choices=("baseline", "mpc"), default="mpc")
    s.add_argument("--days", type=int)
    s.add_argument("--seed", type=int, nargs="+")
    s.add_argument("--weather", help="'coldsnap' or a weather CSV path")
    s.add_argument("--ev", choices=("none", "level2"))
    s.add_argument("--delay-prob", type=float)
    s.add_argument("--artifacts")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="compare two trace CSVs")
    c.add_argument("trace_a")
    c.add_argument("trace_b")
    c.add_argument("--names", nargs=2)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        rc = cfgmod.load(args.config)
        return args.func(args, rc)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (cfgmod.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the exit-code contract needs a catch-all
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
