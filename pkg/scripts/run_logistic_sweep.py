#!/usr/bin/env python3
"""Step-size sweep on the synthetic logistic dataset.

Runs one MCMC + evidence estimate per step size, fits the evidence curve,
and prints the run summary.  Defaults to the sigma=1 spec next to this
script; pass --spec for the sigma=30 variant or your own.
"""

import argparse
import sys
from pathlib import Path

from stepselect.harness import ExperimentSpec, report, run_sweep

SPECS = Path(__file__).parent / "specs"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", default=str(SPECS / "logistic_sigma1.json"),
                    help="experiment spec JSON (default: %(default)s)")
    ap.add_argument("--out", default="runs/logistic",
                    help="output directory (default: %(default)s)")
    ap.add_argument("--jobs", type=int, default=1,
                    help="parallel workers; 1 keeps timings comparable")
    args = ap.parse_args(argv)

    spec = ExperimentSpec.from_json_file(args.spec)
    run_sweep(spec, args.out, jobs=args.jobs)
    report(args.out)
    print((Path(args.out) / "summary.txt").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
