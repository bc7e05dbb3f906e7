"""Threshold-triggered adaptation over streaming sessions.

A session splits into subsessions of `trls` trials. Each subsession is
tested in order; a result below `t_acc` consumes the *next* subsession
entirely as finetuning data, after which testing resumes with the one
after that. A failure on the final subsession trains nothing (there is no
next subsession). The chain baseline instead finetunes on a fixed leading
fraction of every session and tests on the remainder.

Three finetuning strategies are supported: plain transfer (tl), replay
from a reservoir buffer (er), and distillation against a pre-update
snapshot (lwf).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, ParameterError
from .model import (
    FULL,
    HEAD,
    ArchSpec,
    MIBMINet,
    TrainConfig,
    Trainer,
    clone_model,
    evaluate,
    init_model,
    to_batch,
)
from .quantize import CostModel, HeadParams, QuantBackbone, estimate_cost, odl_step, qforward_batch
from .strategies import ReplayBuffer, lwf_loss
from .synth import SessionRecord

TL, ER, LWF = "tl", "er", "lwf"

TESTED = "tested"
TRAINED = "used_for_training"
SKIPPED = "skipped"


@dataclass
class TorConfig:
    """Control knobs of the train-on-request loop."""

    t_acc: float = 0.90
    trls: int = 10
    eps: int = 15
    lr_ft: float = 2e-3
    strategy: str = ER
    scope: str = HEAD
    lambda_o: float = 1.0
    lwf_t: float = 2.0
    s_buf: int = 10

    def __post_init__(self):
        if not 0.0 < self.t_acc <= 1.0:
            raise ConfigurationError(f"t_acc must lie in (0, 1], got {self.t_acc}")
        if self.trls < 1:
            raise ConfigurationError("trls must be positive")
        if self.eps < 0:
            raise ConfigurationError("eps must be non-negative")
        if self.strategy not in (TL, ER, LWF):
            raise ConfigurationError(f"strategy must be tl, er or lwf, got {self.strategy!r}")
        if self.s_buf < 1:
            raise ConfigurationError("s_buf must be positive")
        if self.lwf_t <= 0:
            raise ConfigurationError("lwf temperature must be positive")

    def subss(self, session_size: int) -> int:
        if session_size % self.trls != 0:
            raise ConfigurationError(
                f"session of {session_size} trials does not split into subsessions of {self.trls}"
            )
        return session_size // self.trls


@dataclass
class SubsessionRecord:
    index: int  # 1-based position within the session
    role: str  # tested | used_for_training | skipped
    accuracy: float | None = None
    trigger: bool = False
    steps: int = 0  # training steps contributed when used for training
    trials: int = 0  # training trials consumed when used for training


@dataclass
class SessionLog:
    session: int
    records: list[SubsessionRecord] = field(default_factory=list)
    train_trials: int = 0
    train_steps: int = 0
    latency_s: float = 0.0
    energy_mj: float = 0.0
    acquisition_min: float = 0.0

    @property
    def triggers(self) -> int:
        return sum(1 for r in self.records if r.trigger)

    @property
    def tested_accuracies(self) -> list[float]:
        return [r.accuracy for r in self.records if r.role == TESTED and r.accuracy is not None]

    @property
    def mean_tested_accuracy(self) -> float | None:
        accs = self.tested_accuracies
        return float(np.mean(accs)) if accs else None


class FloatLearner:
    """Full-precision adaptation engine: evaluation plus one finetuning
    block per request, with the configured strategy and scope."""

    def __init__(self, model: MIBMINet, cfg: TorConfig, seed: int = 0):
        self.model = model
        self.cfg = cfg
        self.buffer = ReplayBuffer(cfg.s_buf, seed) if cfg.strategy == ER else None

    def evaluate(self, data: np.ndarray, labels: np.ndarray) -> float:
        return evaluate(self.model, data, labels)

    def finetune(self, data: np.ndarray, labels: np.ndarray) -> int:
        """One block: eps epochs of per-trial steps over the block's trials
        in acquisition order, with replayed items appended within every
        epoch; the block's trials are offered to the buffer afterwards."""
        cfg = self.cfg
        snapshot = clone_model(self.model) if cfg.strategy == LWF else None
        trainer = Trainer(
            self.model,
            TrainConfig(epochs=cfg.eps, lr=cfg.lr_ft, batch_size=1, scope=cfg.scope),
        )
        queue = [(data[i], int(labels[i])) for i in range(len(labels))]
        if self.buffer is not None:
            queue = queue + self.buffer.items()
        for _ in range(cfg.eps):
            for trial, label in queue:
                x, y = to_batch(trial, [label])
                if snapshot is not None:
                    snapshot.eval()
                    with torch.no_grad():
                        old_logits, _ = snapshot(x)

                    def distill(logits, target, old=old_logits):
                        return lwf_loss(logits, old, target, cfg.lambda_o, cfg.lwf_t)

                    trainer.step(x, y, distill)
                else:
                    trainer.step(x, y)
        if self.buffer is not None:
            for i in range(len(labels)):
                self.buffer.offer(data[i], int(labels[i]))
        return trainer.n_steps


class OdlLearner:
    """Deployment-path engine: frozen int8 backbone, float head trained by
    plain SGD on closed-form gradients. Features are cached per block since
    the backbone cannot change."""

    def __init__(self, backbone: QuantBackbone, head: HeadParams, cfg: TorConfig, seed: int = 0):
        self.backbone = backbone
        self.head = head
        self.cfg = cfg
        self.buffer = ReplayBuffer(cfg.s_buf, seed) if cfg.strategy == ER else None

    def _logits(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.head.weight.T + self.head.bias

    def evaluate(self, data: np.ndarray, labels: np.ndarray) -> float:
        if len(labels) == 0:
            raise ParameterError("evaluate requires at least one trial")
        logits = self._logits(qforward_batch(self.backbone, data))
        pred = (logits[:, 1] > logits[:, 0]).astype(np.int64)
        return float(np.mean(pred == np.asarray(labels, dtype=np.int64)))

    def finetune(self, data: np.ndarray, labels: np.ndarray) -> int:
        cfg = self.cfg
        queue = [(data[i], int(labels[i])) for i in range(len(labels))]
        if self.buffer is not None:
            queue = queue + self.buffer.items()
        feats = qforward_batch(self.backbone, np.stack([t for t, _ in queue]))
        old_logits = self._logits(feats) if cfg.strategy == LWF else [None] * len(queue)
        steps = 0
        for _ in range(cfg.eps):
            for feat, (_, label), old in zip(feats, queue, old_logits):
                self.head = odl_step(
                    self.head, feat, label, cfg.lr_ft,
                    old_logits=old,
                    lambda_o=cfg.lambda_o if cfg.strategy == LWF else 0.0,
                    temperature=cfg.lwf_t,
                )
                steps += 1
        if self.buffer is not None:
            for i in range(len(labels)):
                self.buffer.offer(data[i], int(labels[i]))
        return steps


def tor_session(
    learner, session: SessionRecord, cfg: TorConfig, cost: CostModel = CostModel()
) -> SessionLog:
    """Run the request-triggered loop over one session; mutates the learner."""
    n_sub = cfg.subss(len(session))
    blocks = [
        (session.data[i * cfg.trls : (i + 1) * cfg.trls], session.labels[i * cfg.trls : (i + 1) * cfg.trls])
        for i in range(n_sub)
    ]
    log = SessionLog(session=session.session_id)
    i = 0
    while i < n_sub:
        acc = learner.evaluate(*blocks[i])
        if acc >= cfg.t_acc or i + 1 >= n_sub:
            # Satisfied, or unsatisfied on the last subsession with nothing
            # left to train on: either way just move on.
            log.records.append(SubsessionRecord(i + 1, TESTED, acc, trigger=False))
            i += 1
        else:
            log.records.append(SubsessionRecord(i + 1, TESTED, acc, trigger=True))
            steps = learner.finetune(*blocks[i + 1])
            log.records.append(SubsessionRecord(i + 2, TRAINED, steps=steps, trials=cfg.trls))
            log.train_trials += cfg.trls
            log.train_steps += steps
            i += 2
    est = estimate_cost(log.train_steps, log.train_trials, cost)
    log.latency_s = est.train_latency_s
    log.energy_mj = est.energy_mj
    log.acquisition_min = est.acquisition_min
    return log


def tor_workflow(
    learner, sessions: list[SessionRecord], cfg: TorConfig, cost: CostModel = CostModel()
) -> list[SessionLog]:
    """Adapt sequentially over sessions (chronological order), carrying the
    model, buffer, and snapshots forward in the learner."""
    return [tor_session(learner, s, cfg, cost) for s in sessions]


def evaluate_sessions(
    model: MIBMINet, sessions: list[SessionRecord], trls: int = 10, cost: CostModel = CostModel()
) -> list[SessionLog]:
    """No-adaptation baseline: test every subsession, never train."""
    logs = []
    for session in sessions:
        if len(session) % trls != 0:
            raise ConfigurationError(f"session does not split into subsessions of {trls}")
        log = SessionLog(session=session.session_id)
        for i in range(len(session) // trls):
            sl = slice(i * trls, (i + 1) * trls)
            acc = evaluate(model, session.data[sl], session.labels[sl])
            log.records.append(SubsessionRecord(i + 1, TESTED, acc))
        logs.append(log)
    return logs


def pretrain(
    session1: SessionRecord,
    seed: int = 0,
    epochs: int = 40,
    lr: float = 1e-3,
    batch_size: int = 10,
    arch=None,
) -> MIBMINet:
    """Subject-specific base model from the first session."""
    labels = np.asarray(session1.labels)
    if np.unique(labels).size < 2:
        raise ConfigurationError("pretraining data must contain both classes")
    model = init_model(arch or ArchSpec(), seed)
    trainer = Trainer(model, TrainConfig(epochs=epochs, lr=lr, batch_size=batch_size, scope=FULL))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 404]))
    n = len(session1)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x, y = to_batch(session1.data[idx], labels[idx])
            trainer.step(x, y)
    return model


def chain_tl(
    model: MIBMINet,
    sessions: list[SessionRecord],
    split: float = 0.6,
    eps: int = 15,
    lr: float = 2e-3,
    scope: str = HEAD,
    cost: CostModel = CostModel(),
) -> list[SessionLog]:
    """Chain baseline: per session, finetune on the leading `split` fraction
    (per-trial steps, acquisition order) and test on the remainder; the
    model carries over between sessions."""
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must lie strictly in (0, 1), got {split}")
    logs = []
    for session in sessions:
        n = len(session)
        k = int(split * n)
        if k == 0 or k == n:
            raise ConfigurationError(f"split {split} leaves an empty train or test set for {n} trials")
        trainer = Trainer(model, TrainConfig(epochs=eps, lr=lr, batch_size=1, scope=scope))
        for _ in range(eps):
            for i in range(k):
                x, y = to_batch(session.data[i], [int(session.labels[i])])
                trainer.step(x, y)
        acc = evaluate(model, session.data[k:], session.labels[k:])
        log = SessionLog(session=session.session_id)
        log.records.append(SubsessionRecord(1, TRAINED, steps=trainer.n_steps, trials=k))
        log.records.append(SubsessionRecord(2, TESTED, acc))
        log.train_trials = k
        log.train_steps = trainer.n_steps
        est = estimate_cost(log.train_steps, log.train_trials, cost)
        log.latency_s = est.train_latency_s
        log.energy_mj = est.energy_mj
        log.acquisition_min = est.acquisition_min
        logs.append(log)
    return logs


# ---------------------------------------------------------------------------
# Session-log CSV: one row per subsession with within-session cumulative
# budget columns.
# ---------------------------------------------------------------------------

LOG_COLUMNS = (
    "run_id,session,subsession,role,accuracy,trigger,"
    "cum_train_trials,est_energy_mJ,est_latency_s,est_acq_min"
)


def session_logs_to_csv(run_id: str, logs: list[SessionLog], cost: CostModel = CostModel()) -> str:
    lines = [LOG_COLUMNS]
    for log in logs:
        cum_trials = 0
        cum_steps = 0
        for rec in sorted(log.records, key=lambda r: r.index):
            cum_trials += rec.trials
            cum_steps += rec.steps
            est = estimate_cost(cum_steps, cum_trials, cost)
            acc = "" if rec.accuracy is None else f"{rec.accuracy:.6f}"
            lines.append(
                f"{run_id},{log.session},{rec.index},{rec.role},{acc},"
                f"{'true' if rec.trigger else 'false'},{cum_trials},"
                f"{est.energy_mj:.4f},{est.train_latency_s:.4f},{est.acquisition_min:.4f}"
            )
    return "\n".join(lines) + "\n"
