#!/usr/bin/env python3
"""Step-size sweep on the synthetic glucose (OGTT) dataset.

Eight step sizes, h = 0.25 * 2^-k for k = 0..7; the evidence flattens from
k = 3 on, which is the whole point of the exercise.  Parallel by default —
the fine-step chains dominate the wall clock.
"""

import argparse
import sys
from pathlib import Path

from stepselect.harness import ExperimentSpec, report, run_sweep

SPECS = Path(__file__).parent / "specs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", default=str(SPECS / "glucose.json"),
                    help="experiment spec JSON (default: %(default)s)")
    ap.add_argument("--out", default="runs/glucose",
                    help="output directory (default: %(default)s)")
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args(argv)

    spec = ExperimentSpec.from_json_file(args.spec)
    run_sweep(spec, args.out, jobs=args.jobs)
    report(args.out)
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
