"""Score the supply-temperature defrost predictor on a week of cold weather.

Runs the baseline thermostat with the predictor in observe-only mode, so it
takes seconds; pass --mpc to score it inside the full stack instead.
"""

import argparse

import numpy as np

from ampguard.sim import SimConfig, run_closed_loop, train
from ampguard.sim.metrics import defrost_prediction
from ampguard.sim.weather import cold_snap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--start-day", type=float, default=10.0)
    ap.add_argument("--days", type=int, default=7)
    ap.add_argument("--mpc", action="store_true")
    args = ap.parse_args()

    art, _ = train()
    cfg = SimConfig(days=args.days, controller="mpc" if args.mpc else "baseline",
                    weather=cold_snap().slice_days(args.start_day, args.days))
    tr = run_closed_loop(cfg, art) if args.mpc else run_closed_loop(cfg, monitor=art.predictor)
    onsets = tr.defrost_onsets()
    r = defrost_prediction(onsets, tr["defrost_alarm"])
    alarm = tr["defrost_alarm"]
    leads = []
    for i in onsets:
        j = i - 1
        while j >= 0 and alarm[j]:
            j -= 1
        if j < i - 1:
            leads.append((i - 1 - j) * tr.step_seconds / 60.0)
    print(f"outdoor mean {tr['t_out'].mean():.1f} C, {r.onsets} defrost onsets")
    print(f"predicted ahead: {r.predicted} ({100 * r.hit_rate:.0f}%)")
    print(f"alarm episodes {r.alarms}, false {r.false_alarms} (rate {r.false_positive_rate:.2f})")
    if leads:
        print(f"warning ahead of each onset: median {np.median(leads):.1f} min, min {min(leads):.1f} min")


if __name__ == "__main__":
    main()
