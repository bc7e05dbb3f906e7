#!/usr/bin/env python3
"""Sensitivity of the request-triggered workflow to its two knobs:
the accuracy threshold (t_acc in {0.7, 0.8, 0.9, 1.0}) and the subsession
granularity (trls in {5, 10, 20}), both under the replay strategy.

    python scripts/run_sensitivity.py --out runs/sensitivity --seeds 5
"""

import argparse
from pathlib import Path

from torbci.cli import main as cli_main


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="forwarded config overrides")
    parser.add_argument("--out", default="runs/sensitivity")
    parser.add_argument("--seeds", default="5")
    parser.add_argument("--workers", default="1")
    args = parser.parse_args(argv)
    out = Path(args.out)

    common = ["--strategy", "er", "--seeds", args.seeds, "--workers", args.workers]
    for item in args.set:
        common += ["--set", item]
    rc = cli_main(
        ["sweep", "--t-acc", "0.7,0.8,0.9,1.0", "--out", str(out / "t_acc")] + common
    )
    if rc:
        return rc
    rc = cli_main(["sweep", "--trls", "5,10,20", "--out", str(out / "trls")] + common)
    if rc:
        return rc
    print(f"\nsweep reports: {out / 't_acc' / 'sweep_report.csv'}")
    print(f"               {out / 'trls' / 'sweep_report.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
