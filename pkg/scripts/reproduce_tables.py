"""Case 12 power against upper trans-membrane pressure and against selectivity.

    python scripts/reproduce_tables.py [--out DIR]
"""

import argparse
import csv
import os

from memcascade.cases import case
from memcascade.optimizer import SearchSettings, SweepAxis, sweep

BAR = 1e5
U_UPPER_BAR = [107, 125, 150]
SELECTIVITIES = [50, 63, 81, 231]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    settings = SearchSettings.from_env(seed=args.seed)
    spec = case(12)
    os.makedirs(args.out, exist_ok=True)
    for name, axis, values, scale in (("u_upper", SweepAxis.U_UPPER, U_UPPER_BAR, BAR),
                                      ("selectivity", SweepAxis.SELECTIVITY, SELECTIVITIES, 1.0)):
        rows = sweep(spec, settings, axis, [v * scale for v in values])
        path = os.path.join(args.out, f"case12_{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([name, "power_kW", "u_bar", "configuration"])
            for v, r in zip(values, rows):
                w.writerow([v, repr(r.power / 1e3), repr(r.u / BAR), r.config])
                print(f"{name} {v:>6}  {r.power / 1e3:9.1f} kW  u {r.u / BAR:.1f} bar  {r.config}")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
