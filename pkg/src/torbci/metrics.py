"""Evaluation metrics and report aggregation: accuracy summaries, the
Wolpaw information transfer rate, and budget/cost roll-ups.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .quantize import CostModel, estimate_cost
from .workflow import SessionLog

LAST_N_SESSIONS = 3  # window for the end-of-workflow ITR comparison


def wolpaw_itr(p: float, n_classes: int = 2, t_dec_s: float = 4.0) -> float:
    """Wolpaw bits per minute for accuracy p over n_classes with one
    decision every t_dec_s seconds. Undefined below chance."""
    if n_classes < 2:
        raise ParameterError("need at least two classes")
    if t_dec_s <= 0:
        raise ParameterError("decision time must be positive")
    if not 1.0 / n_classes <= p <= 1.0:
        raise ParameterError(f"accuracy {p} outside [1/{n_classes}, 1]; ITR undefined below chance")
    if p == 1.0:
        bits = math.log2(n_classes)
    else:
        bits = (
            math.log2(n_classes)
            + p * math.log2(p)
            + (1.0 - p) * math.log2((1.0 - p) / (n_classes - 1))
        )
    return bits * 60.0 / t_dec_s


def _itr_or_none(acc: float | None, n_classes: int, t_dec_s: float) -> float | None:
    if acc is None or acc < 1.0 / n_classes:
        return None
    return wolpaw_itr(acc, n_classes, t_dec_s)


@dataclass
class RunLog:
    """One workflow run: its strategy label, seed, and per-session logs."""

    strategy: str
    seed: int
    logs: list[SessionLog]


@dataclass
class ReportRow:
    strategy: str
    seed: int | None  # None for seed-averaged rows
    session: int | None  # None for the whole-run summary row
    accuracy: float | None
    train_trials: float
    acquisition_min: float
    energy_mj: float
    itr_bpm: float | None


def _mean_or_none(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def aggregate(
    runs: list[RunLog],
    cost: CostModel = CostModel(),
    n_classes: int = 2,
    t_dec_s: float = 4.0,
) -> list[ReportRow]:
    """Detail rows per (strategy, seed, session), seed-averaged rows per
    (strategy, session), and one summary row per strategy.

    Accuracy means cover tested subsessions only; a session without tested
    subsessions contributes no accuracy (absent, not zero). Summary totals
    are exact sums of the averaged per-session rows.
    """
    rows: list[ReportRow] = []
    by_strategy: dict[str, list[RunLog]] = {}
    for run in sorted(runs, key=lambda r: (r.strategy, r.seed)):
        by_strategy.setdefault(run.strategy, []).append(run)

    for strategy, group in sorted(by_strategy.items()):
        sessions = sorted({log.session for run in group for log in run.logs})
        per_session: dict[int, list[tuple[float | None, int, float, float]]] = {s: [] for s in sessions}
        for run in group:
            for log in sorted(run.logs, key=lambda l: l.session):
                acc = log.mean_tested_accuracy
                est = estimate_cost(log.train_steps, log.train_trials, cost)
                rows.append(
                    ReportRow(
                        strategy, run.seed, log.session, acc,
                        float(log.train_trials), est.acquisition_min, est.energy_mj,
                        _itr_or_none(acc, n_classes, t_dec_s),
                    )
                )
                per_session[log.session].append(
                    (acc, log.train_trials, est.acquisition_min, est.energy_mj)
                )
        averaged: list[ReportRow] = []
        for s in sessions:
            entries = per_session[s]
            acc = _mean_or_none([e[0] for e in entries])
            averaged.append(
                ReportRow(
                    strategy, None, s, acc,
                    float(np.mean([e[1] for e in entries])),
                    float(np.mean([e[2] for e in entries])),
                    float(np.mean([e[3] for e in entries])),
                    _itr_or_none(acc, n_classes, t_dec_s),
                )
            )
        rows.extend(averaged)
        summary_acc = _mean_or_none([r.accuracy for r in averaged])
        rows.append(
            ReportRow(
                strategy, None, None, summary_acc,
                float(sum(r.train_trials for r in averaged)),
                float(sum(r.acquisition_min for r in averaged)),
                float(sum(r.energy_mj for r in averaged)),
                _itr_or_none(summary_acc, n_classes, t_dec_s),
            )
        )
    return rows


def last_sessions_itr(
    runs: list[RunLog], n_last: int = LAST_N_SESSIONS, n_classes: int = 2, t_dec_s: float = 4.0
) -> dict[str, dict[str, float | None]]:
    """Two ITR readings over the final n_last sessions for each strategy:
    the formula applied to the seed-averaged accuracy, and the mean of
    per-session ITR values (they differ slightly; both are reported)."""
    out: dict[str, dict[str, float | None]] = {}
    by_strategy: dict[str, list[RunLog]] = {}
    for run in runs:
        by_strategy.setdefault(run.strategy, []).append(run)
    for strategy, group in sorted(by_strategy.items()):
        sessions = sorted({log.session for run in group for log in run.logs})[-n_last:]
        accs: dict[int, list[float | None]] = {s: [] for s in sessions}
        for run in group:
            for log in run.logs:
                if log.session in sessions:
                    accs[log.session].append(log.mean_tested_accuracy)
        session_means = [_mean_or_none(accs[s]) for s in sessions]
        mean_acc = _mean_or_none(session_means)
        itrs = [_itr_or_none(a, n_classes, t_dec_s) for a in session_means]
        out[strategy] = {
            "accuracy": mean_acc,
            "itr_of_mean_accuracy": _itr_or_none(mean_acc, n_classes, t_dec_s),
            "mean_of_session_itrs": _mean_or_none(itrs),
        }
    return out


REPORT_COLUMNS = "strategy,seed,session,accuracy,train_trials,acquisition_min,energy_mj,itr_bpm"


def _fmt(value, spec: str = ".6f") -> str:
    if value is None:
        return ""
    return format(value, spec)


def report_to_csv(rows: list[ReportRow]) -> str:
    lines = [REPORT_COLUMNS]
    for r in rows:
        seed = "" if r.seed is None else str(r.seed)
        session = "all" if r.session is None else str(r.session)
        lines.append(
            f"{r.strategy},{seed},{session},{_fmt(r.accuracy)},{_fmt(r.train_trials, '.2f')},"
            f"{_fmt(r.acquisition_min, '.4f')},{_fmt(r.energy_mj, '.4f')},{_fmt(r.itr_bpm, '.4f')}"
        )
    return "\n".join(lines) + "\n"


def report_to_json(rows: list[ReportRow], extra: dict | None = None) -> str:
    payload = {
        "rows": [
            {
                "strategy": r.strategy,
                "seed": r.seed,
                "session": r.session,
                "accuracy": r.accuracy,
                "train_trials": r.train_trials,
                "acquisition_min": r.acquisition_min,
                "energy_mj": r.energy_mj,
                "itr_bpm": r.itr_bpm,
            }
            for r in rows
        ]
    }
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
