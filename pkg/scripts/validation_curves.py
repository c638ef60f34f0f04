"""Single-stage crossflow and perfect-mixing curves for both validation sets.

    python scripts/validation_curves.py [--out DIR] [--points 50]
"""

import argparse
import sys

from memcascade.cli import main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="validation")
    p.add_argument("--points", type=int, default=50)
    args = p.parse_args()
    for preset in ("o2-n2", "co2-ch4"):
        code = cli_main(["validate", "--preset", preset, "--points", str(args.points), "--out", args.out])
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
