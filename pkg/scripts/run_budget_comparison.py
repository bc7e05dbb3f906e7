#!/usr/bin/env python3
"""Compare training-trial budgets and per-session accuracy across the
chain baseline and the three adaptive strategies (tl / er / lwf) on the
default synthetic dataset.

Writes one experiment directory per workflow under --out plus a combined
report, and prints the headline numbers (total trials, acquisition
minutes, last-three-sessions accuracy and ITR).

    python scripts/run_budget_comparison.py --out runs/budget --seeds 5
"""

import argparse
import json
from pathlib import Path

from torbci.cli import main as cli_main


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="forwarded config overrides")
    parser.add_argument("--out", default="runs/budget")
    parser.add_argument("--seeds", default="5")
    parser.add_argument("--workers", default="1")
    args = parser.parse_args(argv)
    out = Path(args.out)

    common = ["--seeds", args.seeds, "--workers", args.workers]
    for item in args.set:
        common += ["--set", item]
    rc = cli_main(["chain-tl", "--split", "0.6", "--out", str(out / "chain-tl")] + common)
    if rc:
        return rc
    for strategy in ("tl", "er", "lwf"):
        rc = cli_main(
            ["tor", "--strategy", strategy, "--out", str(out / f"tor-{strategy}")] + common
        )
        if rc:
            return rc

    inputs = [str(out / d) for d in ("chain-tl", "tor-tl", "tor-er", "tor-lwf")]
    rc = cli_main(["report", *inputs, "--out", str(out / "combined")])
    if rc:
        return rc

    summary = json.loads((out / "combined" / "summary.json").read_text())
    print("\nTotal training trials per strategy (seed-averaged):")
    for row in summary["rows"]:
        if row["seed"] is None and row["session"] is None:
            print(
                f"  {row['strategy']:>9}: {row['train_trials']:6.1f} trials, "
                f"{row['acquisition_min']:6.2f} min acquisition"
            )
    print("\nLast-three-sessions accuracy / ITR:")
    for strategy, entry in summary["last_sessions_itr"].items():
        acc = entry["accuracy"]
        itr = entry["itr_of_mean_accuracy"]
        acc_s = f"{acc:.4f}" if acc is not None else "n/a"
        itr_s = f"{itr:.2f} bit/min" if itr is not None else "n/a"
        print(f"  {strategy:>9}: accuracy {acc_s}, ITR {itr_s}")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
