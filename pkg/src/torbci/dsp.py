"""Deterministic EEG preprocessing: IIR filtering, baseline removal, windowing.

The chain mirrors a standard wearable-EEG recipe: Butterworth band-pass,
power-line notch, then a moving-average baseline correction, all applied to
the continuous recording before trials are cut out (windowing after
filtering keeps edge transients out of the trials).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import IngestionError, ParameterError

#: Samples per trial window (3.8 s at 500 Hz); fixed by the classifier's
#: dense-layer arithmetic (32 filters x 29 pooled samples = 928 features).
TRIAL_SAMPLES = 1900
#: Electrode count expected by the classifier's spatial stage.
N_CHANNELS = 8

LEFT, RIGHT = 0, 1


@dataclass
class RawRecording:
    """Continuous multi-channel recording with cue annotations.

    data has shape (n_channels, n_samples), float32, microvolts.
    cue_onsets are sample indices where an instruction cue begins and
    labels give the cued class (0=left, 1=right) for each cue.
    """

    data: np.ndarray
    fs: float = 500.0
    cue_onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ParameterError("recording data must be (channels, samples)")
        self.cue_onsets = np.asarray(self.cue_onsets, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.cue_onsets.shape != self.labels.shape:
            raise ParameterError("one label per cue onset required")
        if self.cue_onsets.size and np.any(np.diff(self.cue_onsets) <= 0):
            raise ParameterError("cue onsets must be strictly increasing")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "RawRecording":
        return RawRecording(data, self.fs, self.cue_onsets.copy(), self.labels.copy())


@dataclass
class TrialWindow:
    """One model-ready trial: (8, 1900) float32 plus its label."""

    data: np.ndarray
    label: int
    session_id: int = 0
    trial_index: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (N_CHANNELS, TRIAL_SAMPLES):
            raise ParameterError(
                f"trial must be {N_CHANNELS}x{TRIAL_SAMPLES}, got {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("trial contains non-finite samples")
        if self.label not in (LEFT, RIGHT):
            raise ParameterError(f"label must be 0 or 1, got {self.label}")


class BiquadCascade:
    """Cascade of second-order IIR sections in float64.

    sos has shape (n_sections, 6) with rows (b0, b1, b2, 1, a1, a2).
    Application is causal and channel-independent with zero initial state.
    """

    def __init__(self, sos: np.ndarray):
        sos = np.atleast_2d(np.asarray(sos, dtype=np.float64))
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ParameterError("sos must be (n_sections, 6)")
        if not np.allclose(sos[:, 3], 1.0):
            raise ParameterError("sections must be normalized to a0=1")
        self.sos = sos

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def poles(self) -> np.ndarray:
        """Poles of every section, concatenated."""
        return np.concatenate([np.roots([1.0, a1, a2]) for _, _, _, _, a1, a2 in self.sos])

    def is_stable(self, margin: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0 - margin))

    def response(self, freqs_hz, fs: float) -> np.ndarray:
        """Complex frequency response H(e^{j 2 pi f / fs}), evaluated directly
        from the coefficients (independent of any library response routine)."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        z = np.exp(2j * np.pi * f / fs)
        zi1, zi2 = 1.0 / z, 1.0 / (z * z)
        h = np.ones_like(z, dtype=np.complex128)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h *= (b0 + b1 * zi1 + b2 * zi2) / (1.0 + a1 * zi1 + a2 * zi2)
        return h

    def gain_db(self, freqs_hz, fs: float, floor_db: float = -300.0) -> np.ndarray:
        mag = np.abs(self.response(freqs_hz, fs))
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(mag)
        return np.maximum(db, floor_db)


def design_bandpass(fs: float, low: float, high: float, order: int = 4) -> BiquadCascade:
    """Butterworth band-pass as a cascade of order/2 biquads.

    `order` counts poles of the final band-pass (4 = two biquads); edges map
    to the -3 dB points.
    """
    if not (0 < low < high < fs / 2):
        raise ParameterError(f"band edges must satisfy 0 < {low} < {high} < fs/2={fs / 2}")
    if order not in (2, 4, 6, 8):
        raise ParameterError(f"order must be one of 2, 4, 6, 8, got {order}")
    sos = signal.butter(order // 2, [low, high], btype="bandpass", fs=fs, output="sos")
    cascade = BiquadCascade(sos)
    if not cascade.is_stable():
        raise RuntimeError("band-pass design produced an unstable section")
    return cascade


def design_notch(fs: float, f0: float, q: float = 30.0) -> BiquadCascade:
    """Single-biquad notch with a unit-circle zero pair at +-f0."""
    if not (0 < f0 < fs / 2):
        raise ParameterError(f"notch frequency {f0} must lie in (0, fs/2)")
    if q <= 0:
        raise ParameterError("quality factor must be positive")
    b, a = signal.iirnotch(f0, q, fs=fs)
    cascade = BiquadCascade(np.hstack([b, a]))
    if not cascade.is_stable():
        raise RuntimeError("notch design produced an unstable section")
    return cascade


def apply_filter(cascade: BiquadCascade, rec: RawRecording) -> RawRecording:
    """Causal per-channel filtering with zero initial state.

    Stateless between calls; output length equals input length.
    """
    out = signal.sosfilt(cascade.sos, rec.data.astype(np.float64), axis=-1)
    return rec.with_data(out.astype(np.float32))


def _centered_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along the last axis; edge windows shrink
    to whatever is available instead of padding."""
    n = x.shape[-1]
    half_l = (window - 1) // 2
    half_r = window // 2
    cs = np.concatenate(
        [np.zeros(x.shape[:-1] + (1,), dtype=np.float64), np.cumsum(x, axis=-1, dtype=np.float64)],
        axis=-1,
    )
    idx = np.arange(n)
    lo = np.maximum(idx - half_l, 0)
    hi = np.minimum(idx + half_r + 1, n)
    return (cs[..., hi] - cs[..., lo]) / (hi - lo)


def moving_average_detrend(
    rec: RawRecording, window_s: float = 0.25, mode: str = "subtract"
) -> RawRecording:
    """Moving-average baseline stage.

    mode="subtract" removes the centered moving average from each channel
    (baseline correction); "smooth" keeps the average itself; "off" is the
    identity. Subtraction is the default: a 0.25 s smoothing window would
    suppress the ~10 Hz band the classifier relies on.
    """
    if mode == "off":
        return rec.with_data(rec.data.copy())
    if mode not in ("subtract", "smooth"):
        raise ParameterError(f"unknown baseline mode {mode!r}")
    window = int(window_s * rec.fs)
    if window < 1:
        raise ParameterError("window must span at least one sample")
    baseline = _centered_mean(rec.data, window)
    out = baseline if mode == "smooth" else rec.data - baseline
    return rec.with_data(out.astype(np.float32))


@dataclass
class PreprocessSettings:
    """Knobs for the fixed band-pass -> notch -> baseline chain."""

    bp_low: float = 0.5
    bp_high: float = 100.0
    bp_order: int = 4
    notch_freq: float = 50.0
    notch_q: float = 30.0
    baseline_window_s: float = 0.25
    baseline_mode: str = "subtract"  # subtract | smooth | off


def preprocess_recording(rec: RawRecording, settings: PreprocessSettings | None = None) -> RawRecording:
    """Band-pass, notch, then baseline-correct a continuous recording."""
    s = settings or PreprocessSettings()
    bp = design_bandpass(rec.fs, s.bp_low, s.bp_high, s.bp_order)
    notch = design_notch(rec.fs, s.notch_freq, s.notch_q)
    out = apply_filter(bp, rec)
    out = apply_filter(notch, out)
    return moving_average_detrend(out, s.baseline_window_s, s.baseline_mode)


def extract_trials(
    rec: RawRecording, session_id: int = 0, n_samples: int = TRIAL_SAMPLES
) -> list[TrialWindow]:
    """Cut one window per cue: the first n_samples samples after each onset."""
    trials = []
    for i, (onset, label) in enumerate(zip(rec.cue_onsets, rec.labels)):
        if onset + n_samples > rec.n_samples:
            raise IngestionError(
                f"cue {i} at sample {onset} has only {rec.n_samples - onset} samples, "
                f"needs {n_samples}"
            )
        trials.append(
            TrialWindow(rec.data[:, onset : onset + n_samples], int(label), session_id, i)
        )
    return trials
