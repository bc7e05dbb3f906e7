"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The workflow-level
criteria share one five-seed experiment grid (pretrain + chain baseline +
threshold-triggered runs per seed) built once per session; expect several
minutes of compute on a laptop CPU.
"""

import functools

import numpy as np
import pytest
import torch

from conftest import ScriptedLearner, scripted_session
from oracles import naive_forward, trace_schedule
from torbci.dsp import RawRecording, apply_filter, design_bandpass, design_notch
from torbci.metrics import wolpaw_itr
from torbci.model import ArchSpec, clone_model, evaluate, init_model, to_batch
from torbci.quantize import CostModel, HeadParams, calibrate_quantize, estimate_cost, qforward_batch
from torbci.strategies import ReplayBuffer
from torbci.synth import GeneratorSpec, generate_dataset, generate_probe
from torbci.workflow import (
    TESTED,
    TRAINED,
    FloatLearner,
    TorConfig,
    chain_tl,
    evaluate_sessions,
    pretrain,
    tor_session,
    tor_workflow,
)

SEEDS = (0, 1, 2, 3, 4)


def criterion(num: int, desc: str):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {num:2d}: FAIL - {desc}")
                raise
            print(f"\nACCEPTANCE {num:2d}: PASS - {desc}")

        return inner

    return wrap


@pytest.fixture(scope="module")
def grid():
    """Five-seed experiment grid on the default generator: pretrained
    model, chain baseline, adaptive runs (replay + plain transfer), the
    frozen-model baseline, and held-out session-1 probes."""
    out = {
        "chain_logs": [], "er_logs": [], "tl_logs": [], "noadapt_logs": [],
        "er_probe": [], "tl_probe": [], "model_seed0": None, "dataset_seed0": None,
    }
    for seed in SEEDS:
        spec = GeneratorSpec(seed=seed)
        dataset = generate_dataset(spec)
        print(f"\n[grid] seed {seed}: pretraining...", flush=True)
        base = pretrain(dataset[0], seed=seed)
        train_acc = evaluate(base, dataset[0].data, dataset[0].labels)
        assert train_acc > 0.9, f"session-1 training accuracy {train_acc} too low"
        if seed == 0:
            out["model_seed0"] = clone_model(base)
            out["dataset_seed0"] = dataset

        out["noadapt_logs"].append(evaluate_sessions(base, dataset[1:]))

        print(f"[grid] seed {seed}: chain baseline...", flush=True)
        out["chain_logs"].append(chain_tl(clone_model(base), dataset[1:], split=0.6))

        probe = generate_probe(spec, 0, 100)
        for strategy, logs_key, probe_key in (("er", "er_logs", "er_probe"),
                                              ("tl", "tl_logs", "tl_probe")):
            print(f"[grid] seed {seed}: tor-{strategy}...", flush=True)
            cfg = TorConfig(strategy=strategy)
            learner = FloatLearner(clone_model(base), cfg, seed=seed)
            out[logs_key].append(tor_workflow(learner, dataset[1:], cfg))
            out[probe_key].append(evaluate(learner.model, probe.data, probe.labels))
    return out


def mean_acc_sessions_5to7(logs_per_seed) -> float:
    values = []
    for logs in logs_per_seed:
        values.extend(
            log.mean_tested_accuracy for log in logs if log.session >= 5
        )
    return float(np.mean(values))


@criterion(1, "trigger cost arithmetic: 150 steps, 3.24 s, 162 mJ, 1.67 min")
def test_cost_arithmetic():
    est = estimate_cost(150, 10, CostModel())
    assert est.train_latency_s == pytest.approx(3.24, abs=1e-12)
    assert est.energy_mj == pytest.approx(162.0, abs=1e-9)
    assert est.acquisition_min == pytest.approx(10 * 10 / 60, abs=1e-12)
    assert round(est.acquisition_min, 2) == 1.67

    cfg = TorConfig(t_acc=0.9, trls=10, eps=15, strategy="tl")
    learner = ScriptedLearner([0.0] + [1.0] * 9, steps_per_block=150)
    log = tor_session(learner, scripted_session(10, 10), cfg)
    assert log.train_steps == 150
    assert log.train_trials == 10
    assert log.latency_s == pytest.approx(3.24)
    assert log.energy_mj == pytest.approx(162.0)
    assert log.acquisition_min == pytest.approx(1.6667, abs=5e-4)


@criterion(2, "ITR reproduction: 0.9233 -> ~9.0 bit/min, 0.8881 -> ~7.6 bit/min")
def test_itr_reproduction():
    assert 8.9 <= wolpaw_itr(0.9233, 2, 4.0) <= 9.4
    assert 7.2 <= wolpaw_itr(0.8881, 2, 4.0) <= 7.7


@criterion(3, "trial budget: chain 60/session; adaptive replay <= 60% of 360")
def test_budget_reproduction(grid):
    for chain_logs in grid["chain_logs"]:
        assert len(chain_logs) == 6
        for log in chain_logs:
            assert log.train_trials == 60
            assert log.acquisition_min == pytest.approx(10.0, abs=1e-12)
    chain_total = 360.0

    er_totals = [sum(log.train_trials for log in logs) for logs in grid["er_logs"]]
    mean_er = float(np.mean(er_totals))
    print(f"  [3] replay-adaptive trials per seed: {er_totals}, mean {mean_er:.1f}")
    assert mean_er <= 0.6 * chain_total


@criterion(4, "control-flow trace oracle: 1,000 random scripted sequences")
def test_trace_oracle():
    rng = np.random.default_rng(42)
    cost = CostModel()
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        accs = rng.choice([0.0, 0.25, 0.5, 0.75, 0.85, 0.9, 0.95, 1.0], size=n).tolist()
        t_acc = float(rng.choice([0.7, 0.8, 0.9, 1.0]))
        cfg = TorConfig(t_acc=t_acc, trls=1, eps=15, strategy="tl")
        learner = ScriptedLearner(accs, steps_per_block=15)
        log = tor_session(learner, scripted_session(n, 1), cfg, cost)
        roles, triggers = trace_schedule(accs, t_acc)
        got = {r.index: ("tested" if r.role == TESTED else "trained") for r in log.records}
        assert got == roles
        assert [r.index for r in log.records if r.trigger] == triggers
        assert log.train_trials == len(triggers) * cfg.trls
        assert log.acquisition_min == pytest.approx(
            log.train_trials * cost.t_trial_s / 60.0
        )


@criterion(5, "reservoir uniformity: inclusion 0.100 +- 0.02 over 10,000 replays")
def test_reservoir_uniformity():
    capacity, n, replays = 10, 100, 10_000
    counts = np.zeros(n)
    for seed in range(replays):
        buf = ReplayBuffer(capacity, seed=seed)
        for i in range(n):
            buf.offer(np.array([[np.float32(i)]]), 0)
        for trial, _ in buf.items():
            counts[int(trial[0, 0])] += 1
    rates = counts / replays
    worst = float(np.max(np.abs(rates - 0.1)))
    print(f"  [5] worst per-item deviation from 0.100: {worst:.4f}")
    assert np.all(np.abs(rates - 0.1) <= 0.02)


@criterion(6, "gradient correctness: analytic vs central differences, both scopes")
def test_gradient_correctness():
    from test_model import check_scope_gradients

    worst = 0.0
    for seed in range(10):
        worst = max(worst, check_scope_gradients(seed, "full"))
    for seed in range(10):
        worst = max(worst, check_scope_gradients(seed, "head"))
    print(f"  [6] worst relative error over 20 cases: {worst:.2e}")
    assert worst < 1e-3


@criterion(7, "forward pass matches the naive direct-convolution oracle")
def test_forward_oracle():
    assert ArchSpec().feature_dim == 928
    worst = 0.0
    rng = np.random.default_rng(7)
    for seed in range(20):
        model = init_model(seed=seed).double()
        for bn in (model.bn1, model.bn2, model.bn3):
            bn.running_mean.copy_(torch.from_numpy(rng.normal(0, 0.5, bn.num_features)))
            bn.running_var.copy_(torch.from_numpy(rng.uniform(0.5, 2.0, bn.num_features)))
        x = rng.standard_normal((8, 1900))
        model.eval()
        with torch.inference_mode():
            logits, feat = model(torch.from_numpy(x).unsqueeze(0))
        assert feat.shape[1] == 928
        ref_logits, _ = naive_forward(model, x)
        worst = max(worst, float(np.max(np.abs(logits[0].numpy() - ref_logits))))
    print(f"  [7] worst |logit - oracle| over 20 inputs: {worst:.2e}")
    assert worst <= 1e-5


@criterion(8, "int8 fidelity: cosine >= 0.99 per trial, argmax agreement >= 98%")
def test_quantization_fidelity(grid):
    model = grid["model_seed0"]
    session1 = grid["dataset_seed0"][0]
    backbone = calibrate_quantize(model, session1.data[:20])
    head = HeadParams.from_model(model)

    probe = generate_probe(GeneratorSpec(seed=0), 0, 200)
    qfeats = qforward_batch(backbone, probe.data)
    model.eval()
    with torch.inference_mode():
        float_logits, float_feats = model(to_batch(probe.data, probe.labels)[0])
    float_feats = float_feats.numpy()
    float_logits = float_logits.numpy()

    norms = np.linalg.norm(qfeats, axis=1) * np.linalg.norm(float_feats, axis=1)
    cosines = np.einsum("ij,ij->i", qfeats, float_feats) / norms
    q_logits = qfeats @ head.weight.T + head.bias
    q_pred = q_logits[:, 1] > q_logits[:, 0]
    f_pred = float_logits[:, 1] > float_logits[:, 0]
    agreement = float(np.mean(q_pred == f_pred))
    print(f"  [8] min cosine {cosines.min():.4f}, argmax agreement {agreement:.3f}")
    assert np.all(cosines >= 0.99)
    assert agreement >= 0.98


@criterion(9, "DSP contract: notch >= 30 dB at 50 Hz, band-pass >= 60 dB at DC")
def test_dsp_contract():
    fs = 500.0
    bp = design_bandpass(fs, 0.5, 100.0, 4)
    notch = design_notch(fs, 50.0, 30.0)
    # analytic, from the coefficients
    assert -bp.gain_db(0.0, fs)[0] >= 60.0
    assert -notch.gain_db(50.0, fs)[0] >= 30.0

    t = np.arange(int(30 * fs)) / fs
    tail = slice(int(0.6 * t.size), None)
    sine50 = RawRecording(np.sin(2 * np.pi * 50 * t)[None, :].astype(np.float32), fs)
    out = apply_filter(notch, sine50).data[0][tail]
    proj = 2 * abs(np.mean(out * np.exp(-2j * np.pi * 50 * t[tail])))
    assert -20 * np.log10(proj) >= 30.0

    dc = RawRecording(np.ones((1, t.size), dtype=np.float32), fs)
    residual = abs(float(np.mean(apply_filter(bp, dc).data[0][tail])))
    assert residual <= 10 ** (-60 / 20)

    # measured steady-state gain tracks the analytic response within 0.5 dB
    for cascade, freq in ((bp, 10.0), (bp, 2.0), (notch, 45.0)):
        sine = RawRecording(np.sin(2 * np.pi * freq * t)[None, :].astype(np.float32), fs)
        y = apply_filter(cascade, sine).data[0][tail]
        amp = 2 * abs(np.mean(y * np.exp(-2j * np.pi * freq * t[tail])))
        assert 20 * np.log10(amp) == pytest.approx(cascade.gain_db(freq, fs)[0], abs=0.5)


@criterion(10, "adaptation efficacy: replay beats frozen baseline by >= 10 points; "
              "replay retains session 1 at least as well as plain transfer")
def test_adaptation_efficacy(grid):
    er = mean_acc_sessions_5to7(grid["er_logs"])
    frozen = mean_acc_sessions_5to7(grid["noadapt_logs"])
    er_probe = float(np.mean(grid["er_probe"]))
    tl_probe = float(np.mean(grid["tl_probe"]))
    print(f"  [10] sessions 5-7: replay {er:.3f} vs frozen {frozen:.3f} "
          f"(margin {er - frozen:+.3f}); probes: replay {er_probe:.3f} vs transfer {tl_probe:.3f}")
    assert er - frozen >= 0.10
    assert er_probe >= tl_probe


def test_strategies_share_control_flow_until_first_trigger(grid):
    """Replay and plain-transfer runs from the same pretrained model must
    agree on every record up to and including the first trigger (they only
    diverge through what finetuning does afterwards)."""
    for er_logs, tl_logs in zip(grid["er_logs"], grid["tl_logs"]):
        for er_log, tl_log in zip(er_logs, tl_logs):
            for er_rec, tl_rec in zip(er_log.records, tl_log.records):
                assert (er_rec.index, er_rec.role, er_rec.accuracy, er_rec.trigger) == (
                    tl_rec.index, tl_rec.role, tl_rec.accuracy, tl_rec.trigger,
                )
                if er_rec.trigger:
                    break
            else:
                continue
            break


@criterion(11, "determinism: identical config and seeds give byte-identical reports")
def test_run_determinism(tmp_path):
    from torbci.config import build_config
    from torbci.runner import run_experiment

    overrides = {
        "run.workflow": "tor",
        "gen.n_sessions": "2",
        "gen.trials_per_session": "20",
        "gen.runs_per_session": "2",
        "pretrain.epochs": "2",
        "tor.eps": "1",
        "run.seeds": "0,1",
    }
    outs = []
    for name in ("a", "b"):
        cfg = build_config(dict(overrides))
        outs.append(run_experiment(cfg, out_dir=tmp_path / name))
    assert (outs[0] / "report.csv").read_bytes() == (outs[1] / "report.csv").read_bytes()
    assert (outs[0] / "summary.json").read_bytes() == (outs[1] / "summary.json").read_bytes()
    for seed in (0, 1):
        assert (outs[0] / f"seed_{seed}" / "sessions.csv").read_bytes() == (
            outs[1] / f"seed_{seed}" / "sessions.csv"
        ).read_bytes()
