"""Seeded synthetic EEG sessions with controllable inter-session drift.

Stands in for a private multi-session recording: each trial is 1/f
background noise plus a bilateral ~10 Hz mu rhythm whose hemisphere
contralateral to the cued hand is attenuated during the cue (ERD).
Channels 0-3 model the left hemisphere, 4-7 the right. Sessions after the
first accumulate a random drift (per-channel gain jitter, a near-identity
channel mixing, noise rescaling) to emulate day-to-day electrode shift.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dsp import (
    LEFT,
    RIGHT,
    N_CHANNELS,
    TRIAL_SAMPLES,
    PreprocessSettings,
    RawRecording,
    TrialWindow,
    extract_trials,
    preprocess_recording,
)
from .errors import IngestionError, ParameterError

#: Per-channel weight of each hemisphere's mu source (mirrored across sides).
_HEMI_PROFILE = np.array([1.0, 0.85, 0.7, 0.55])


@dataclass
class GeneratorSpec:
    """Configuration of the synthetic dataset.

    Defaults are tuned so that a model pretrained on session 1 is nearly
    perfect in-distribution, still passes the early (mildly drifted)
    sessions, collapses on the late sessions (whose channel mixing
    approaches a full hemisphere swap), and recovers under
    threshold-triggered finetuning of the classifier head.
    """

    n_sessions: int = 7
    trials_per_session: int = 100
    runs_per_session: int = 10  # each run: 5 left then 5 right cues
    fs: float = 500.0
    n_channels: int = N_CHANNELS
    mu_freq: float = 10.0
    erd_depth: float = 0.5
    noise_level: float = 0.5
    drift_gain: float = 0.15  # sigma of per-session log-gain jitter
    drift_mix: float = 0.785  # mixing-rotation scale in radians (~45 deg)
    drift_noise: float = 0.05  # sigma of per-session log noise rescale
    cue_s: float = 4.0
    rest_s: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_session != self.runs_per_session * 10:
            raise ParameterError("trials_per_session must equal runs_per_session x 10")
        if not 0.0 <= self.erd_depth <= 1.0:
            raise ParameterError("erd_depth must lie in [0, 1]")
        if self.n_channels != N_CHANNELS:
            raise ParameterError(f"generator models exactly {N_CHANNELS} channels")
        if self.cue_s * self.fs < TRIAL_SAMPLES:
            raise ParameterError("cue window shorter than one trial window")


@dataclass
class SessionRecord:
    """One session's preprocessed trials in array form."""

    session_id: int
    data: np.ndarray  # (n_trials, n_channels, n_samples) float32
    labels: np.ndarray  # (n_trials,) uint8
    fs: float = 500.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.data.ndim != 3 or self.data.shape[0] != self.labels.shape[0]:
            raise ParameterError("data must be (n_trials, channels, samples) matching labels")

    def __len__(self) -> int:
        return self.data.shape[0]

    def trials(self) -> list[TrialWindow]:
        return [
            TrialWindow(self.data[i], int(self.labels[i]), self.session_id, i)
            for i in range(len(self))
        ]


def record_from_trials(trials: list[TrialWindow], fs: float = 500.0) -> SessionRecord:
    if not trials:
        raise ParameterError("cannot build a session from zero trials")
    return SessionRecord(
        session_id=trials[0].session_id,
        data=np.stack([t.data for t in trials]),
        labels=np.array([t.label for t in trials], dtype=np.uint8),
        fs=fs,
    )


def _rng(*key) -> np.random.Generator:
    """Deterministic stream for a structured key; keys are independent."""
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance 1/f noise via spectral shaping of white noise."""
    n_freq = n // 2 + 1
    spec = rng.standard_normal(n_freq) + 1j * rng.standard_normal(n_freq)
    scale = np.ones(n_freq)
    scale[1:] = 1.0 / np.sqrt(np.arange(1, n_freq))
    spec *= scale
    spec[0] = 0.0
    x = np.fft.irfft(spec, n=n)
    return (x / x.std()).astype(np.float64)


@dataclass
class SessionDrift:
    gains: np.ndarray  # (8,)
    mixing: np.ndarray  # (8, 8)
    noise_scale: float


def session_drifts(spec: GeneratorSpec) -> list[SessionDrift]:
    """Per-session drift transforms; the first session is the identity
    reference, every later session draws its own electrode re-placement:
    log-normal per-channel gains, an orthogonal mixing rotation, and a
    log-normal noise rescale.

    The mixing rotates each mirror channel pair (left/right hemisphere
    counterparts) by a seeded angle whose magnitude grows with the session
    index: session i gets drift_mix * (i-1)/3 radians (+-10% jitter per
    pair, random sign, clipped at 90 degrees). At the default drift_mix of
    ~45 degrees the fourth session blends the hemispheres completely and
    the last sessions approach a full left/right swap. Rotations are
    exactly energy-preserving and invertible, so the class information
    survives and an adapted readout can recover it, while a model frozen
    on session 1 degrades progressively and decisively. (Unstructured
    I + eps*K perturbations, and fixed-magnitude rotations, both leave a
    frozen model's accuracy to per-session luck: an orthogonal transform
    either preserves or flips its decision axis, so constant-scale drift
    yields bimodal rather than graded degradation.)
    """
    half = spec.n_channels // 2
    eye = np.eye(spec.n_channels)
    drifts = [SessionDrift(np.ones(spec.n_channels), eye.copy(), 1.0)]
    for session in range(1, spec.n_sessions):
        rng = _rng(spec.seed, 101, session)
        gains = np.exp(spec.drift_gain * rng.standard_normal(spec.n_channels))
        mixing = eye.copy()
        signs = rng.integers(0, 2, half) * 2 - 1
        magnitude = spec.drift_mix * session / 3.0
        angles = np.clip(magnitude * rng.uniform(0.9, 1.1, half), 0.0, np.pi / 2) * signs
        for pair, theta in enumerate(angles):
            c, s = np.cos(theta), np.sin(theta)
            i, j = pair, pair + half
            mixing[i, i], mixing[i, j] = c, s
            mixing[j, i], mixing[j, j] = -s, c
        noise_scale = float(np.exp(spec.drift_noise * rng.standard_normal()))
        drifts.append(SessionDrift(gains, mixing, noise_scale))
    return drifts


def _session_labels(n_trials: int) -> np.ndarray:
    """5 left then 5 right, repeated per run (the acquisition protocol)."""
    block = np.array([LEFT] * 5 + [RIGHT] * 5, dtype=np.uint8)
    return np.tile(block, n_trials // 10 + 1)[:n_trials]


def generate_raw_session(
    spec: GeneratorSpec,
    session_idx: int,
    n_trials: int | None = None,
    stream: int = 0,
) -> RawRecording:
    """Continuous recording for one session (0-based index).

    `stream` selects an independent noise/phase realization for the same
    session-level drift; probe sets use stream != 0.
    """
    n_trials = spec.trials_per_session if n_trials is None else n_trials
    drift = session_drifts(spec)[session_idx]
    rest = int(spec.rest_s * spec.fs)
    cue = int(spec.cue_s * spec.fs)
    n_total = rest + n_trials * (cue + rest)
    onsets = rest + np.arange(n_trials) * (cue + rest)
    labels = _session_labels(n_trials)

    rng = _rng(spec.seed, 202, session_idx, stream)
    t = np.arange(n_total) / spec.fs

    # Hemisphere mu sources: per-trial random phase, ERD envelope on the
    # hemisphere contralateral to the cued hand during the cue window.
    envelope = np.ones((2, n_total))
    for onset, label in zip(onsets, labels):
        contra = 1 if label == LEFT else 0  # left hand -> right hemisphere
        envelope[contra, onset : onset + cue] = 1.0 - spec.erd_depth
    sources = np.empty((2, n_total))
    bounds = np.concatenate([[0], onsets, [n_total]])
    for hemi in range(2):
        phase = rng.uniform(0, 2 * np.pi, size=len(bounds) - 1)
        for seg, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            sources[hemi, a:b] = np.sin(2 * np.pi * spec.mu_freq * t[a:b] + phase[seg])
    sources *= envelope

    clean = np.zeros((spec.n_channels, n_total))
    clean[:4] = _HEMI_PROFILE[:, None] * sources[0]
    clean[4:] = _HEMI_PROFILE[:, None] * sources[1]

    noise = np.stack([pink_noise(n_total, rng) for _ in range(spec.n_channels)])
    noise *= spec.noise_level * drift.noise_scale

    data = drift.gains[:, None] * (drift.mixing @ clean + noise)
    return RawRecording(data.astype(np.float32), spec.fs, onsets, labels)


def generate_session(
    spec: GeneratorSpec,
    session_idx: int,
    n_trials: int | None = None,
    stream: int = 0,
    settings: PreprocessSettings | None = None,
) -> SessionRecord:
    """Generate, preprocess, and window one session."""
    raw = generate_raw_session(spec, session_idx, n_trials, stream)
    filtered = preprocess_recording(raw, settings)
    return record_from_trials(extract_trials(filtered, session_id=session_idx + 1), spec.fs)


def generate_dataset(spec: GeneratorSpec) -> list[SessionRecord]:
    """All sessions of the synthetic dataset, preprocessed and windowed."""
    return [generate_session(spec, i) for i in range(spec.n_sessions)]


def generate_probe(
    spec: GeneratorSpec, session_idx: int = 0, n_trials: int = 100, stream: int = 1
) -> SessionRecord:
    """Held-out trials from one session's distribution (fresh noise/phases)."""
    if stream == 0:
        raise ParameterError("stream 0 is the in-dataset realization; probes need stream != 0")
    return generate_session(spec, session_idx, n_trials, stream)


# ---------------------------------------------------------------------------
# Session file I/O
# ---------------------------------------------------------------------------

_MAGIC = b"EEGS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, n_channels, fs, n_trials, n_samples


def write_session(record: SessionRecord, path) -> None:
    """Binary session container; little-endian, bit-exact round trip."""
    n_trials, n_channels, n_samples = record.data.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, n_channels, int(record.fs), n_trials, n_samples))
        for i in range(n_trials):
            f.write(struct.pack("<BI", int(record.labels[i]), i))
            f.write(record.data[i].astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IngestionError(f"truncated session file: expected {what} at byte {f.tell() - len(buf)}")
    return buf


def read_session(path, session_id: int = 0) -> SessionRecord:
    with open(path, "rb") as f:
        magic, version, n_channels, fs, n_trials, n_samples = _HEADER.unpack(
            _read_exact(f, _HEADER.size, "header")
        )
        if magic != _MAGIC:
            raise IngestionError(f"bad magic {magic!r} at byte 0, expected {_MAGIC!r}")
        if version != _VERSION:
            raise IngestionError(f"unsupported session file version {version} at byte 4")
        data = np.empty((n_trials, n_channels, n_samples), dtype=np.float32)
        labels = np.empty(n_trials, dtype=np.uint8)
        for i in range(n_trials):
            label, idx = struct.unpack("<BI", _read_exact(f, 5, f"trial {i} header"))
            labels[i] = label
            raw = _read_exact(f, n_channels * n_samples * 4, f"trial {i} payload")
            data[i] = np.frombuffer(raw, dtype="<f4").reshape(n_channels, n_samples)
        trailing = f.read(1)
        if trailing:
            raise IngestionError(f"unexpected trailing bytes at byte {f.tell() - 1}")
    return SessionRecord(session_id, data, labels, float(fs))


def write_session_csv(record: SessionRecord, path) -> None:
    """Interoperability format: one row per sample, t,ch1..ch8,label,trial."""
    n_trials, n_channels, n_samples = record.data.shape
    with open(path, "w", newline="") as f:
        cols = ["t"] + [f"ch{c + 1}" for c in range(n_channels)] + ["label", "trial"]
        f.write(",".join(cols) + "\n")
        for i in range(n_trials):
            for s in range(n_samples):
                vals = [f"{s / record.fs:.6f}"]
                vals += [repr(float(v)) for v in record.data[i, :, s]]
                vals += [str(int(record.labels[i])), str(i)]
                f.write(",".join(vals) + "\n")


def read_session_csv(path, session_id: int = 0, fs: float = 500.0) -> SessionRecord:
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header[:1] != ["t"] or header[-2:] != ["label", "trial"]:
            raise IngestionError("CSV header must be t,ch1..chN,label,trial")
        n_channels = len(header) - 3
        per_trial: dict[int, list[np.ndarray]] = {}
        trial_labels: dict[int, int] = {}
        for line_no, line in enumerate(f, start=2):
            parts = line.strip().split(",")
            if len(parts) != len(header):
                raise IngestionError(f"CSV line {line_no}: expected {len(header)} columns")
            trial = int(parts[-1])
            trial_labels[trial] = int(parts[-2])
            per_trial.setdefault(trial, []).append(
                np.array(parts[1:-2], dtype=np.float32)
            )
    if not per_trial:
        raise IngestionError("CSV file contains no samples")
    indices = sorted(per_trial)
    data = np.stack([np.stack(per_trial[i], axis=1) for i in indices])
    labels = np.array([trial_labels[i] for i in indices], dtype=np.uint8)
    return SessionRecord(session_id, data, labels, fs)
