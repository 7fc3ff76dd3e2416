"""Baseline thermostat vs the MPC stack over the 31-day cold snap.

Trains controller artifacts first (a few seconds), then runs both
controllers and prints the violation and comfort summary.  The MPC month
takes roughly ten minutes on one core.
"""

import argparse
import time

import numpy as np

from ampguard.report import metrics_table, summarize
from ampguard.sim import SimConfig, run_closed_loop, train
from ampguard.sim.weather import cold_snap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=int, default=31)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    art, _ = train()
    weather = cold_snap(max(args.days, 31))
    runs = {}
    for ctl in ("baseline", "mpc"):
        t = time.perf_counter()
        tr = run_closed_loop(SimConfig(seed=args.seed, days=args.days, controller=ctl, weather=weather), art)
        runs[ctl] = summarize(tr)
        print(f"{ctl}: {time.perf_counter() - t:.0f} s, mean t_in {runs[ctl]['mean_t_in_c']:.2f} C, "
              f"max 5-min {runs[ctl]['max_average_a']:.1f} A")
        if ctl == "mpc":
            print(f"  median solve {np.median(tr['solve_seconds']):.2f} s, median gap {np.median(tr['gaps']):.3f}")
    print(metrics_table(runs))


if __name__ == "__main__":
    main()
