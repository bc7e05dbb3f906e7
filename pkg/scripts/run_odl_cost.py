#!/usr/bin/env python3
"""Deployment-path readout: quantize a pretrained backbone to int8, report
its fidelity against the float model, run the request-triggered workflow
on the int8 engine, and print the per-subsession training cost implied by
the embedded measurement constants.

    python scripts/run_odl_cost.py --out runs/odl
"""

import argparse
from pathlib import Path

from torbci.cli import main as cli_main
from torbci.quantize import CostModel, estimate_cost


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="forwarded config overrides")
    parser.add_argument("--out", default="runs/odl")
    parser.add_argument("--seeds", default="1,")
    args = parser.parse_args(argv)
    out = Path(args.out)
    common = []
    for item in args.set:
        common += ["--set", item]

    rc = cli_main(["pretrain", "--seeds", args.seeds, "--out", str(out / "pretrain")] + common)
    if rc:
        return rc
    first_seed = args.seeds.split(",")[0]
    ckpt = out / "pretrain" / f"seed_{first_seed}" / "model_pretrained.torw"
    rc = cli_main(["quantize", "--checkpoint", str(ckpt), "--out", str(out / "quant")] + common)
    if rc:
        return rc
    rc = cli_main(
        ["tor", "--strategy", "er", "--engine", "int8", "--seeds", args.seeds,
         "--out", str(out / "tor-int8")] + common
    )
    if rc:
        return rc

    cm = CostModel()
    print("\nEmbedded training cost per finetuning request (15 epochs x 10 trials):")
    est = estimate_cost(150, 10, cm)
    print(f"  {est.train_latency_s:.2f} s on-device training, {est.energy_mj:.0f} mJ, "
          f"{est.acquisition_min:.2f} min of data acquisition")
    print(f"  per training step: {cm.t_step_ms} ms, {cm.e_step_mj} mJ "
          f"(average power {cm.p_avg_mw} mW)")
    return 0


if __name__ == "__main__":
    raise SystemExit(run())
