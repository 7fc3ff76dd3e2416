"""One cold day with the 70 kWh / 48 A EV plugged in from 17:00 to 07:00."""

import argparse

import numpy as np

from ampguard.sim import EvScenario, SimConfig, run_closed_loop, train
from ampguard.sim.weather import cold_snap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start-day", type=float, default=12.5, help="day offset into the cold snap")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    art, _ = train()
    ev = EvScenario()
    tr = run_closed_loop(SimConfig(seed=args.seed, days=1, controller="mpc", ev=ev,
                                   weather=cold_snap().slice_days(args.start_day, 1)), art)
    five = tr.five_minute()
    on = tr["ev_on"].astype(int)
    print(f"max 5-min current {five.max():.1f} A, steps over 100 A: {int(np.sum(five > 100))}")
    print(f"charger switches {np.count_nonzero(np.diff(on))}, charged {tr['i_ev'].sum() * 240 / 1000 / 120:.1f} kWh")
    print(f"state of charge at end {tr['ev_soc'][-1]:.2f} of {ev.model.capacity:.0f} kWh")
    for e in tr.events:
        print(" ", e)


if __name__ == "__main__":
    main()
