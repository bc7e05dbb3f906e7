"""Command-line harness.

Subcommands: generate, pretrain, chain-tl, tor, sweep, report, quantize.
Flags mirror the config keys one-to-one; a config file (-c) supplies
defaults, flags override. Exit codes: 0 success, 2 configuration error,
3 runtime failure (partial outputs are kept, MANIFEST notes incompleteness).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_config, read_config_file, resolve_config
from .errors import ConfigurationError, IngestionError, ParameterError
from .metrics import RunLog, aggregate, last_sessions_itr, report_to_csv, report_to_json
from .model import evaluate, load_checkpoint
from .quantize import HeadParams, calibrate_quantize, qforward_batch, save_quant_checkpoint
from .runner import (
    load_sessions,
    output_root,
    run_experiment,
    session_logs_from_csv,
)
from .synth import generate_dataset, write_session


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="key=value config file")
    p.add_argument("--out", help="output directory (run.out)")
    p.add_argument("--seeds", help="seed count or comma list (run.seeds)")
    p.add_argument("--data-seed", help="fixed dataset seed shared by all runs (run.data_seed)")
    p.add_argument("--data-dir", help="read .eegs sessions from here instead of generating")
    p.add_argument("--workers", help="parallel seed workers (run.workers)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. --set gen.erd_depth=0.4")


_GEN_FLAGS = ["n_sessions", "trials_per_session", "erd_depth", "noise_level",
              "drift_gain", "drift_mix", "drift_noise", "seed"]
_TOR_FLAGS = ["t_acc", "trls", "eps", "lr_ft", "strategy", "scope", "lambda_o", "lwf_t", "s_buf"]


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    for name in _GEN_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"gen.{name}")


def _add_tor_flags(p: argparse.ArgumentParser) -> None:
    for name in _TOR_FLAGS:
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"tor.{name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torbci", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic .eegs session files")
    _add_common(p)
    _add_gen_flags(p)

    p = sub.add_parser("pretrain", help="train the base model on session 1 per seed")
    _add_common(p)
    _add_gen_flags(p)
    for name in ("epochs", "lr", "batch_size"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"pretrain.{name}")

    p = sub.add_parser("chain-tl", help="chain transfer-learning baseline")
    _add_common(p)
    _add_gen_flags(p)
    p.add_argument("--split", dest="run.split")
    p.add_argument("--eps", dest="tor.eps")
    p.add_argument("--lr-ft", dest="tor.lr_ft")
    p.add_argument("--scope", dest="tor.scope")
    p.add_argument("--checkpoint", dest="run.checkpoint")

    p = sub.add_parser("tor", help="threshold-triggered adaptation workflow")
    _add_common(p)
    _add_gen_flags(p)
    _add_tor_flags(p)
    p.add_argument("--engine", dest="run.engine")
    p.add_argument("--checkpoint", dest="run.checkpoint")

    p = sub.add_parser("sweep", help="tor over a grid of t-acc or trls values")
    _add_common(p)
    _add_gen_flags(p)
    _add_tor_flags(p)
    p.add_argument("--engine", dest="run.engine")

    p = sub.add_parser("report", help="re-aggregate session CSVs from run directories")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="experiment directories with seed_*/sessions.csv")

    p = sub.add_parser("quantize", help="calibrate an int8 backbone from a checkpoint")
    _add_common(p)
    _add_gen_flags(p)
    p.add_argument("--checkpoint", dest="run.checkpoint", required=True)
    p.add_argument("--calib-trials", default="20", help="calibration trial count")
    return parser


def config_from_args(args: argparse.Namespace, workflow: str | None = None) -> ExperimentConfig:
    entries: dict = {}
    if args.config:
        entries.update(read_config_file(args.config))
    for flag, key in (("out", "run.out"), ("seeds", "run.seeds"), ("data_seed", "run.data_seed"),
                      ("data_dir", "run.data_dir"), ("workers", "run.workers")):
        value = getattr(args, flag, None)
        if value is not None:
            entries[key] = value
    for key, value in vars(args).items():
        if "." in key and value is not None:
            entries[key] = value
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        entries[key.strip()] = value.strip()
    if workflow:
        entries["run.workflow"] = workflow
    return build_config(entries, path=args.config)


def cmd_generate(args) -> int:
    cfg = config_from_args(args)
    out = output_root(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolve_config(cfg))
    sessions = generate_dataset(cfg.gen)
    for record in sessions:
        write_session(record, out / f"session_{record.session_id:02d}.eegs")
    print(f"wrote {len(sessions)} sessions to {out}")
    return 0


def cmd_workflow(args, workflow: str) -> int:
    cfg = config_from_args(args, workflow)
    out = run_experiment(cfg)
    print(f"{workflow} complete: report at {out / 'report.csv'}")
    return 0


def cmd_sweep(args) -> int:
    # Pull the swept grid out before the config is built (a comma list is
    # not a valid scalar for tor.t_acc / tor.trls).
    t_acc_raw = getattr(args, "tor.t_acc", None)
    trls_raw = getattr(args, "tor.trls", None)
    if t_acc_raw and "," in t_acc_raw:
        values = [("t_acc", float(v)) for v in t_acc_raw.split(",") if v]
        setattr(args, "tor.t_acc", None)
    elif trls_raw and "," in trls_raw:
        values = [("trls", int(v)) for v in trls_raw.split(",") if v]
        setattr(args, "tor.trls", None)
    else:
        raise ConfigurationError("sweep needs --t-acc or --trls with a comma-separated grid")
    cfg = config_from_args(args, "tor")
    root = output_root(cfg)
    root.mkdir(parents=True, exist_ok=True)
    combined: list[str] = []
    for name, value in values:
        sub_cfg = ExperimentConfig(
            run=replace(cfg.run, out=cfg.run.out),
            gen=cfg.gen,
            tor=replace(cfg.tor, **{name: value}),
            pretrain=cfg.pretrain,
            cost=cfg.cost,
        )
        sub_out = root / f"{name}_{value}"
        run_experiment(sub_cfg, out_dir=sub_out)
        report = (sub_out / "report.csv").read_text().splitlines()
        header, rows = report[0], report[1:]
        if not combined:
            combined.append(f"{name},{header}")
        combined.extend(f"{value},{row}" for row in rows)
    (root / "sweep_report.csv").write_text("\n".join(combined) + "\n")
    print(f"sweep complete: {root / 'sweep_report.csv'}")
    return 0


def cmd_report(args) -> int:
    cfg = config_from_args(args)
    runs: list[RunLog] = []
    for directory in args.inputs:
        for csv_path in sorted(Path(directory).glob("seed_*/sessions.csv")):
            for run_id, logs in session_logs_from_csv(csv_path.read_text(), cfg).items():
                strategy, _, seed_part = run_id.rpartition("-seed")
                runs.append(RunLog(strategy=strategy, seed=int(seed_part), logs=logs))
    if not runs:
        raise ConfigurationError(f"no seed_*/sessions.csv found under {args.inputs}")
    out = output_root(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate(runs, cfg.cost)
    (out / "report.csv").write_text(report_to_csv(rows))
    (out / "summary.json").write_text(report_to_json(rows, {"last_sessions_itr": last_sessions_itr(runs)}))
    print(f"report written to {out / 'report.csv'}")
    return 0


def cmd_quantize(args) -> int:
    cfg = config_from_args(args)
    model = load_checkpoint(cfg.run.checkpoint)
    sessions = load_sessions(cfg, cfg.run.seeds[0])
    n_calib = int(args.calib_trials)
    calib = sessions[0].data[:n_calib]
    backbone = calibrate_quantize(model, calib)
    head = HeadParams.from_model(model)
    out = output_root(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "backbone.torq"
    save_quant_checkpoint(backbone, head, path)

    # Fidelity readout against the float model on session-1 trials not used
    # for calibration (the deployment distribution); falls back to the
    # calibration trials when the session has nothing left.
    rest = sessions[0].data[n_calib:]
    if len(rest):
        test = rest[-100:]
        test_labels = sessions[0].labels[n_calib:][-100:]
    else:
        test = calib
        test_labels = sessions[0].labels[:n_calib]
    qfeat = qforward_batch(backbone, test)
    qlogits = qfeat @ head.weight.T + head.bias
    qacc = float(np.mean((qlogits[:, 1] > qlogits[:, 0]).astype(int) == test_labels))
    facc = evaluate(model, test, test_labels)
    for w in backbone.warnings:
        print(f"warning: {w}")
    print(f"quantized backbone written to {path}")
    print(f"float accuracy {facc:.4f} vs int8 accuracy {qacc:.4f} on {len(test)} trials")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "pretrain":
            return cmd_workflow(args, "pretrain")
        if args.command == "chain-tl":
            return cmd_workflow(args, "chain-tl")
        if args.command == "tor":
            return cmd_workflow(args, "tor")
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "quantize":
            return cmd_quantize(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigurationError, ParameterError, IngestionError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 3
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
