"""Experiment orchestration: per-seed runs, on-disk artifacts, reports.

Every experiment directory receives the fully-resolved configuration, one
sub-directory per seed (session logs, checkpoints), an aggregate report
(CSV + JSON), and a MANIFEST listing the artifacts; a failed run leaves
its partial outputs behind with the MANIFEST marked incomplete.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

from .config import ExperimentConfig
from .errors import ConfigurationError
from .metrics import RunLog, aggregate, last_sessions_itr, report_to_csv, report_to_json
from .model import MIBMINet, evaluate, load_checkpoint, save_checkpoint
from .quantize import HeadParams, calibrate_quantize, estimate_cost, save_quant_checkpoint
from .synth import SessionRecord, generate_dataset, read_session
from .workflow import (
    TESTED,
    TRAINED,
    FloatLearner,
    OdlLearner,
    SessionLog,
    SubsessionRecord,
    chain_tl,
    pretrain,
    session_logs_to_csv,
    tor_workflow,
)


def output_root(cfg: ExperimentConfig) -> Path:
    """TOR_OUT environment variable overrides the configured output root."""
    env = os.environ.get("TOR_OUT")
    base = Path(env) if env else Path(".")
    return base / cfg.run.out if env else Path(cfg.run.out)


def load_sessions(cfg: ExperimentConfig, seed: int) -> list[SessionRecord]:
    if cfg.run.data_dir:
        paths = sorted(Path(cfg.run.data_dir).glob("*.eegs"))
        if not paths:
            raise ConfigurationError(f"no .eegs files under {cfg.run.data_dir}")
        return [read_session(p, session_id=i + 1) for i, p in enumerate(paths)]
    data_seed = cfg.run.data_seed if cfg.run.data_seed is not None else seed
    return generate_dataset(replace(cfg.gen, seed=data_seed))


def pretrained_model(cfg: ExperimentConfig, seed: int, sessions: list[SessionRecord]) -> MIBMINet:
    if cfg.run.checkpoint:
        if not Path(cfg.run.checkpoint).is_file():
            raise ConfigurationError(f"checkpoint {cfg.run.checkpoint!r} does not exist")
        return load_checkpoint(cfg.run.checkpoint)
    return pretrain(
        sessions[0], seed,
        epochs=cfg.pretrain.epochs, lr=cfg.pretrain.lr, batch_size=cfg.pretrain.batch_size,
    )


def run_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path) -> RunLog:
    """One complete run of the configured workflow for one seed."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    sessions = load_sessions(cfg, seed)
    model = pretrained_model(cfg, seed, sessions)

    if cfg.run.workflow == "pretrain":
        save_checkpoint(model, seed_dir / "model_pretrained.torw")
        acc = evaluate(model, sessions[0].data, sessions[0].labels)
        log = SessionLog(session=sessions[0].session_id)
        log.records.append(SubsessionRecord(1, TESTED, acc))
        logs = [log]
        run_id = f"pretrain-seed{seed}"
        strategy = "pretrain"
    elif cfg.run.workflow == "chain-tl":
        logs = chain_tl(model, sessions[1:], split=cfg.run.split,
                        eps=cfg.tor.eps, lr=cfg.tor.lr_ft, scope=cfg.tor.scope, cost=cfg.cost)
        save_checkpoint(model, seed_dir / "model_final.torw")
        run_id = f"chain-tl-seed{seed}"
        strategy = "chain-tl"
    else:
        if cfg.run.engine == "int8":
            backbone = calibrate_quantize(model, sessions[0].data)
            head = HeadParams.from_model(model)
            learner = OdlLearner(backbone, head, cfg.tor, seed)
            logs = tor_workflow(learner, sessions[1:], cfg.tor, cfg.cost)
            save_quant_checkpoint(backbone, learner.head, seed_dir / "model_final.torq")
        else:
            learner = FloatLearner(model, cfg.tor, seed)
            logs = tor_workflow(learner, sessions[1:], cfg.tor, cfg.cost)
            save_checkpoint(learner.model, seed_dir / "model_final.torw")
        run_id = f"tor-{cfg.tor.strategy}-seed{seed}"
        strategy = f"tor-{cfg.tor.strategy}"

    (seed_dir / "sessions.csv").write_text(session_logs_to_csv(run_id, logs, cfg.cost))
    return RunLog(strategy=strategy, seed=seed, logs=logs)


def _seed_worker(resolved: str, seed: int, seed_dir: str) -> RunLog:
    from .config import build_config as _bc

    entries = {k: v for k, (v, _) in _parse_resolved(resolved).items()}
    cfg = _bc(entries)
    return run_seed(cfg, seed, Path(seed_dir))


def _parse_resolved(text: str) -> dict[str, tuple[str, int]]:
    entries: dict[str, tuple[str, int]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.strip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key.strip()] = (value.strip(), line_no)
    return entries


def run_experiment(cfg: ExperimentConfig, out_dir: Path | None = None) -> Path:
    """Run the configured workflow for every seed and aggregate reports."""
    from .config import resolve_config

    out = out_dir if out_dir is not None else output_root(cfg)
    out.mkdir(parents=True, exist_ok=True)
    resolved = resolve_config(cfg)
    (out / "config.resolved").write_text(resolved)
    manifest = [f"workflow={cfg.run.workflow}", "status=incomplete"]
    (out / "MANIFEST").write_text("\n".join(manifest) + "\n")

    runs: list[RunLog] = []
    seed_dirs = {seed: out / f"seed_{seed}" for seed in cfg.run.seeds}
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(
            max_workers=cfg.run.workers, mp_context=get_context("spawn")
        ) as pool:
            futures = [
                pool.submit(_seed_worker, resolved, seed, str(seed_dirs[seed]))
                for seed in cfg.run.seeds
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [run_seed(cfg, seed, seed_dirs[seed]) for seed in cfg.run.seeds]

    write_report(runs, cfg, out)
    artifacts = ["config.resolved", "report.csv", "summary.json"] + [
        f"seed_{s}/sessions.csv" for s in cfg.run.seeds
    ]
    manifest = [f"workflow={cfg.run.workflow}", "status=complete"] + [
        f"artifact={a}" for a in artifacts
    ]
    (out / "MANIFEST").write_text("\n".join(manifest) + "\n")
    return out


def write_report(runs: list[RunLog], cfg: ExperimentConfig, out: Path) -> None:
    rows = aggregate(runs, cfg.cost)
    (out / "report.csv").write_text(report_to_csv(rows))
    extra = {"last_sessions_itr": last_sessions_itr(runs)}
    (out / "summary.json").write_text(report_to_json(rows, extra))


# ---------------------------------------------------------------------------
# Log recovery (for the report subcommand): rebuild SessionLogs from the
# session CSV; steps are recovered from the cumulative latency column.
# ---------------------------------------------------------------------------


def session_logs_from_csv(text: str, cfg: ExperimentConfig) -> dict[str, list[SessionLog]]:
    lines = text.strip().splitlines()
    by_run: dict[str, dict[int, SessionLog]] = {}
    prev: dict[tuple[str, int], tuple[int, int]] = {}
    for line in lines[1:]:
        run_id, session, sub, role, acc, trigger, cum_trials, _e, cum_lat, _a = line.split(",")
        session = int(session)
        log = by_run.setdefault(run_id, {}).setdefault(session, SessionLog(session=session))
        cum_steps = round(float(cum_lat) / (cfg.cost.t_step_ms / 1000.0))
        p_trials, p_steps = prev.get((run_id, session), (0, 0))
        rec = SubsessionRecord(
            int(sub), role,
            float(acc) if acc else None,
            trigger == "true",
            steps=cum_steps - p_steps,
            trials=int(cum_trials) - p_trials,
        )
        log.records.append(rec)
        if role == TRAINED:
            log.train_trials += rec.trials
            log.train_steps += rec.steps
        prev[(run_id, session)] = (int(cum_trials), cum_steps)
    out: dict[str, list[SessionLog]] = {}
    for run_id, sessions in by_run.items():
        logs = [sessions[s] for s in sorted(sessions)]
        for log in logs:
            est = estimate_cost(log.train_steps, log.train_trials, cfg.cost)
            log.latency_s = est.train_latency_s
            log.energy_mj = est.energy_mj
            log.acquisition_min = est.acquisition_min
        out[run_id] = logs
    return out


