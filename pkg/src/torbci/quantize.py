"""Emulated int8 deployment path: frozen quantized backbone, float head.

The backbone is folded (BN into the preceding conv), weight-quantized
per tensor (symmetric, scale = max|w|/127), and activation-calibrated from
min/max over a calibration set. Inference runs integer cross-correlations
with 32-bit accumulators and float rescale + round-half-even requantization
between layers; the head stays float32 and is the only trainable part.

Accumulator bound: the widest stage sums 128 taps of (activation - zero
point) in [-255, 255] times weights in [-127, 127], i.e. at most
128 * 255 * 127 = 4,145,280 per output, far inside int32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError, ParameterError, TrainingError
from .model import BN_EPS, ArchSpec, MIBMINet

INT8_MIN, INT8_MAX = -128, 127
WEIGHT_MAX = 127


@dataclass(frozen=True)
class QuantTensor:
    q: np.ndarray  # int8
    scale: float


@dataclass(frozen=True)
class ActQuant:
    """Asymmetric int8 activation quantizer; range always includes zero so
    padding can be represented exactly by the zero point."""

    scale: float
    zero_point: int

    @staticmethod
    def from_range(vmin: float, vmax: float) -> "ActQuant":
        vmin, vmax = min(vmin, 0.0), max(vmax, 0.0)
        if vmax == vmin:
            return ActQuant(1.0, 0)
        scale = (vmax - vmin) / (INT8_MAX - INT8_MIN)
        zero_point = int(np.clip(round(-vmin / scale) + INT8_MIN, INT8_MIN, INT8_MAX))
        return ActQuant(float(scale), zero_point)

    def quantize(self, v: np.ndarray) -> np.ndarray:
        q = np.round(v / self.scale) + self.zero_point  # round half to even
        return np.clip(q, INT8_MIN, INT8_MAX).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (q.astype(np.float32) - self.zero_point) * np.float32(self.scale)


def quantize_weight(w: np.ndarray, warnings: list[str], name: str) -> QuantTensor:
    """Symmetric per-tensor int8: scale = max|w| / 127."""
    amax = float(np.max(np.abs(w))) if w.size else 0.0
    if amax == 0.0:
        warnings.append(f"weight tensor {name!r} is all-zero; scale defaults to 1")
        scale = 1.0
    else:
        scale = amax / WEIGHT_MAX
    q = np.clip(np.round(w / scale), -WEIGHT_MAX, WEIGHT_MAX).astype(np.int8)
    return QuantTensor(q, scale)


@dataclass
class FoldedBackbone:
    """Float backbone after BN folding; reference path for calibration and
    the folding-correctness check."""

    arch: ArchSpec
    w_spatial: np.ndarray  # (F, C)
    b_spatial: np.ndarray  # (F,)
    w_temporal: np.ndarray  # (F, K)
    b_temporal: np.ndarray  # (F,)
    w_ds: np.ndarray  # (F, Kds)
    w_pointwise: np.ndarray  # (F, F)
    b_pointwise: np.ndarray  # (F,)


def _bn_fold(weight, bn_gamma, bn_beta, bn_mean, bn_var):
    g = bn_gamma / np.sqrt(bn_var + BN_EPS)
    return weight * g[:, None], bn_beta - bn_mean * g


def fold_backbone(model: MIBMINet) -> FoldedBackbone:
    sd = {k: v.detach().numpy().astype(np.float64) for k, v in model.state_dict().items()}
    w_sp, b_sp = _bn_fold(
        sd["spatial.weight"][:, :, 0],
        sd["bn1.weight"], sd["bn1.bias"], sd["bn1.running_mean"], sd["bn1.running_var"],
    )
    w_t, b_t = _bn_fold(
        sd["temporal.weight"][:, 0, :],
        sd["bn2.weight"], sd["bn2.bias"], sd["bn2.running_mean"], sd["bn2.running_var"],
    )
    w_pw, b_pw = _bn_fold(
        sd["pointwise.weight"][:, :, 0],
        sd["bn3.weight"], sd["bn3.bias"], sd["bn3.running_mean"], sd["bn3.running_var"],
    )
    return FoldedBackbone(
        model.arch, w_sp, b_sp, w_t, b_t, sd["ds_depthwise.weight"][:, 0, :], w_pw, b_pw
    )


def _pad_lr(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k // 2


def _dw_correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel 'same'-length cross-correlation (pad handled by caller)."""
    windows = np.lib.stride_tricks.sliding_window_view(x, w.shape[1], axis=-1)
    return np.einsum("clk,ck->cl", windows, w)


def _maxpool(x: np.ndarray, k: int) -> np.ndarray:
    n = (x.shape[-1] // k) * k
    return x[..., :n].reshape(*x.shape[:-1], -1, k).max(axis=-1)


def folded_forward(fb: FoldedBackbone, x: np.ndarray, taps: dict | None = None) -> np.ndarray:
    """Float features of the folded backbone; optionally exposes per-stage
    activations (for calibration)."""
    a = fb.arch
    x = np.asarray(x, dtype=np.float64)
    f1 = fb.w_spatial @ x + fb.b_spatial[:, None]
    pl, pr = _pad_lr(a.temporal_kernel)
    f2 = _dw_correlate(np.pad(f1, ((0, 0), (pl, pr))), fb.w_temporal) + fb.b_temporal[:, None]
    f3 = _maxpool(np.maximum(f2, 0.0), a.pool1)
    pl, pr = _pad_lr(a.ds_kernel)
    f4 = _dw_correlate(np.pad(f3, ((0, 0), (pl, pr))), fb.w_ds)
    f5 = fb.w_pointwise @ f4 + fb.b_pointwise[:, None]
    feat = _maxpool(np.maximum(f5, 0.0), a.pool2).reshape(-1)
    if taps is not None:
        taps.update(x=x, f1=f1, f3=f3, f4=f4, f5=f5)
    return feat.astype(np.float32)


@dataclass
class QuantBackbone:
    """Frozen int8 backbone; immutable after calibration."""

    arch: ArchSpec
    w_spatial: QuantTensor
    b_spatial: np.ndarray
    w_temporal: QuantTensor
    b_temporal: np.ndarray
    w_ds: QuantTensor
    w_pointwise: QuantTensor
    b_pointwise: np.ndarray
    act_in: ActQuant
    act_spatial: ActQuant
    act_pooled: ActQuant
    act_ds: ActQuant
    act_out: ActQuant
    warnings: list[str] = field(default_factory=list)


def calibrate_quantize(model: MIBMINet, calib: np.ndarray) -> QuantBackbone:
    """Fold BN, quantize weights per tensor, calibrate activations by
    min/max over the calibration trials. The head is not quantized.
    """
    calib = np.asarray(calib, dtype=np.float32)
    if calib.ndim != 3 or calib.shape[0] < 10:
        raise ParameterError("calibration needs at least 10 trials of shape (n, C, S)")
    fb = fold_backbone(model)
    warnings: list[str] = []
    ranges = {k: [np.inf, -np.inf] for k in ("x", "f1", "f3", "f4", "f5")}
    for trial in calib:
        taps: dict = {}
        folded_forward(fb, trial, taps)
        for k, v in taps.items():
            ranges[k][0] = min(ranges[k][0], float(v.min()))
            ranges[k][1] = max(ranges[k][1], float(v.max()))
    return QuantBackbone(
        arch=fb.arch,
        w_spatial=quantize_weight(fb.w_spatial, warnings, "spatial"),
        b_spatial=fb.b_spatial.astype(np.float32),
        w_temporal=quantize_weight(fb.w_temporal, warnings, "temporal"),
        b_temporal=fb.b_temporal.astype(np.float32),
        w_ds=quantize_weight(fb.w_ds, warnings, "ds_depthwise"),
        w_pointwise=quantize_weight(fb.w_pointwise, warnings, "pointwise"),
        b_pointwise=fb.b_pointwise.astype(np.float32),
        act_in=ActQuant.from_range(*ranges["x"]),
        act_spatial=ActQuant.from_range(*ranges["f1"]),
        act_pooled=ActQuant.from_range(*ranges["f3"]),
        act_ds=ActQuant.from_range(*ranges["f4"]),
        act_out=ActQuant.from_range(*ranges["f5"]),
        warnings=warnings,
    )


def _offset(q: np.ndarray, aq: ActQuant) -> np.ndarray:
    return q.astype(np.int32) - aq.zero_point


def _pad_q(q: np.ndarray, k: int, zero_point: int) -> np.ndarray:
    pl, pr = _pad_lr(k)
    return np.pad(q, ((0, 0), (pl, pr)), constant_values=zero_point)


def qforward(qb: QuantBackbone, x: np.ndarray) -> np.ndarray:
    """Integer forward pass; returns dequantized float32 features.

    All convolutions accumulate in int32 (see module docstring for the
    overflow bound); rescaling to the next activation grid is done in float
    with round-half-even.
    """
    a = qb.arch
    q0 = qb.act_in.quantize(np.asarray(x, dtype=np.float32))

    acc1 = qb.w_spatial.q.astype(np.int32) @ _offset(q0, qb.act_in)
    r1 = acc1 * np.float32(qb.act_in.scale * qb.w_spatial.scale) + qb.b_spatial[:, None]
    q1 = qb.act_spatial.quantize(r1)

    x1 = _offset(_pad_q(q1, a.temporal_kernel, qb.act_spatial.zero_point), qb.act_spatial)
    acc2 = _dw_correlate(x1, qb.w_temporal.q.astype(np.int32))
    r2 = acc2 * np.float32(qb.act_spatial.scale * qb.w_temporal.scale) + qb.b_temporal[:, None]
    q2 = qb.act_pooled.quantize(_maxpool(np.maximum(r2, 0.0), a.pool1))

    x2 = _offset(_pad_q(q2, a.ds_kernel, qb.act_pooled.zero_point), qb.act_pooled)
    acc3 = _dw_correlate(x2, qb.w_ds.q.astype(np.int32))
    r3 = acc3 * np.float32(qb.act_pooled.scale * qb.w_ds.scale)
    q3 = qb.act_ds.quantize(r3)

    acc4 = qb.w_pointwise.q.astype(np.int32) @ _offset(q3, qb.act_ds)
    r4 = acc4 * np.float32(qb.act_ds.scale * qb.w_pointwise.scale) + qb.b_pointwise[:, None]
    q4 = qb.act_out.quantize(r4)

    feat = _maxpool(np.maximum(qb.act_out.dequantize(q4), 0.0), a.pool2)
    return feat.reshape(-1).astype(np.float32)


def qforward_batch(qb: QuantBackbone, data: np.ndarray) -> np.ndarray:
    return np.stack([qforward(qb, trial) for trial in data])


# ---------------------------------------------------------------------------
# Float head + on-device-learning step
# ---------------------------------------------------------------------------


@dataclass
class HeadParams:
    weight: np.ndarray  # (n_classes, feature_dim) float32
    bias: np.ndarray  # (n_classes,) float32

    @staticmethod
    def from_model(model: MIBMINet) -> "HeadParams":
        return HeadParams(
            model.head.weight.detach().numpy().astype(np.float32).copy(),
            model.head.bias.detach().numpy().astype(np.float32).copy(),
        )

    def copy(self) -> "HeadParams":
        return HeadParams(self.weight.copy(), self.bias.copy())

    def logits(self, feat: np.ndarray) -> np.ndarray:
        return self.weight @ np.asarray(feat, dtype=np.float32) + self.bias


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def odl_step(
    head: HeadParams,
    feat: np.ndarray,
    label: int,
    lr: float,
    old_logits: np.ndarray | None = None,
    lambda_o: float = 0.0,
    temperature: float = 2.0,
) -> HeadParams:
    """One SGD step on the float head over frozen features.

    The gradient is closed-form: (softmax - onehot) outer features for the
    cross-entropy term, plus (lambda/T) * (softmax(z/T) - softmax(z_old/T))
    when a distillation snapshot is supplied.
    """
    feat = np.asarray(feat, dtype=np.float64)
    if not np.all(np.isfinite(feat)):
        raise TrainingError("non-finite feature vector in head training step")
    if lr < 0:
        raise ParameterError("lr must be non-negative")
    z = head.weight.astype(np.float64) @ feat + head.bias.astype(np.float64)
    g_z = _softmax(z)
    g_z[label] -= 1.0
    if old_logits is not None and lambda_o != 0.0:
        g_z += (lambda_o / temperature) * (
            _softmax(z / temperature) - _softmax(np.asarray(old_logits, np.float64) / temperature)
        )
    new_w = head.weight - np.float32(lr) * np.outer(g_z, feat).astype(np.float32)
    new_b = head.bias - np.float32(lr) * g_z.astype(np.float32)
    return HeadParams(new_w, new_b)


# ---------------------------------------------------------------------------
# Training-step cost model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Measured per-step constants of the embedded head-training routine,
    plus the per-trial acquisition time used for minutes figures."""

    t_step_ms: float = 21.6
    e_step_mj: float = 1.08
    p_avg_mw: float = 50.2
    t_trial_s: float = 10.0

    def __post_init__(self):
        if min(self.t_step_ms, self.e_step_mj, self.p_avg_mw, self.t_trial_s) <= 0:
            raise ParameterError("cost constants must be positive")
        implied_mj = self.p_avg_mw * self.t_step_ms / 1000.0
        if abs(implied_mj - self.e_step_mj) > 0.01 * self.e_step_mj:
            raise ParameterError(
                f"energy/power inconsistent: {self.p_avg_mw} mW x {self.t_step_ms} ms "
                f"= {implied_mj:.4f} mJ vs e_step {self.e_step_mj} mJ"
            )


@dataclass(frozen=True)
class CostEstimate:
    train_latency_s: float
    energy_mj: float
    acquisition_min: float


def estimate_cost(n_steps: int, n_trials_acquired: int, cm: CostModel) -> CostEstimate:
    """Exactly linear in both counts."""
    if n_steps < 0 or n_trials_acquired < 0:
        raise ParameterError("counts must be non-negative")
    return CostEstimate(
        train_latency_s=n_steps * cm.t_step_ms / 1000.0,
        energy_mj=n_steps * cm.e_step_mj,
        acquisition_min=n_trials_acquired * cm.t_trial_s / 60.0,
    )


# ---------------------------------------------------------------------------
# Quantized checkpoint ("TORQ"): magic, u32 version, then per-tensor records
# of (u16 name length, name, u8 dtype, u8 rank, u32 dims...,
# [f32 scale when dtype=int8], payload). dtype: 0=int8, 1=f32, 2=i32.
# ---------------------------------------------------------------------------

_Q_MAGIC = b"TORQ"
_Q_VERSION = 1
_DT_I8, _DT_F32, _DT_I32 = 0, 1, 2


def _write_record(f, name: str, arr: np.ndarray, scale: float | None = None) -> None:
    encoded = name.encode()
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    if arr.dtype == np.int8:
        dtype = _DT_I8
    elif arr.dtype == np.int32:
        dtype = _DT_I32
    else:
        dtype = _DT_F32
        arr = arr.astype("<f4")
    f.write(struct.pack("<BB", dtype, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    if dtype == _DT_I8:
        f.write(struct.pack("<f", scale if scale is not None else 1.0))
    f.write(arr.tobytes())


def save_quant_checkpoint(qb: QuantBackbone, head: HeadParams, path) -> None:
    with open(path, "wb") as f:
        f.write(_Q_MAGIC)
        f.write(struct.pack("<I", _Q_VERSION))
        for name in ("spatial", "temporal", "ds", "pointwise"):
            qt: QuantTensor = getattr(qb, f"w_{name}")
            _write_record(f, f"{name}.weight", qt.q, qt.scale)
        for name in ("spatial", "temporal", "pointwise"):
            _write_record(f, f"{name}.bias", getattr(qb, f"b_{name}"))
        for name in ("in", "spatial", "pooled", "ds", "out"):
            aq: ActQuant = getattr(qb, f"act_{name}")
            _write_record(f, f"act_{name}.scale", np.array([aq.scale], dtype=np.float32))
            _write_record(f, f"act_{name}.zero_point", np.array([aq.zero_point], dtype=np.int32))
        _write_record(f, "head.weight", head.weight)
        _write_record(f, "head.bias", head.bias)


def load_quant_checkpoint(path, arch: ArchSpec = ArchSpec()) -> tuple[QuantBackbone, HeadParams]:
    records: dict[str, tuple[np.ndarray, float | None]] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _Q_MAGIC:
            raise IngestionError(f"bad quant checkpoint magic {magic!r} at byte 0")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _Q_VERSION:
            raise IngestionError(f"unsupported quant checkpoint version {version}")
        while True:
            head_bytes = f.read(2)
            if not head_bytes:
                break
            (name_len,) = struct.unpack("<H", head_bytes)
            name = f.read(name_len).decode()
            dtype, rank = struct.unpack("<BB", f.read(2))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            scale = None
            if dtype == _DT_I8:
                (scale,) = struct.unpack("<f", f.read(4))
                arr = np.frombuffer(f.read(int(np.prod(dims))), dtype=np.int8).reshape(dims)
            elif dtype == _DT_I32:
                arr = np.frombuffer(f.read(4 * int(np.prod(dims))), dtype="<i4").reshape(dims)
            elif dtype == _DT_F32:
                arr = np.frombuffer(f.read(4 * int(np.prod(dims))), dtype="<f4").reshape(dims)
            else:
                raise IngestionError(f"unknown dtype tag {dtype} for tensor {name!r}")
            records[name] = (arr.copy(), scale)

    def qt(name: str) -> QuantTensor:
        arr, scale = records[f"{name}.weight"]
        return QuantTensor(arr, float(scale))

    def aq(name: str) -> ActQuant:
        return ActQuant(
            float(records[f"act_{name}.scale"][0][0]),
            int(records[f"act_{name}.zero_point"][0][0]),
        )

    try:
        qb = QuantBackbone(
            arch=arch,
            w_spatial=qt("spatial"),
            b_spatial=records["spatial.bias"][0].astype(np.float32),
            w_temporal=qt("temporal"),
            b_temporal=records["temporal.bias"][0].astype(np.float32),
            w_ds=qt("ds"),
            w_pointwise=qt("pointwise"),
            b_pointwise=records["pointwise.bias"][0].astype(np.float32),
            act_in=aq("in"),
            act_spatial=aq("spatial"),
            act_pooled=aq("pooled"),
            act_ds=aq("ds"),
            act_out=aq("out"),
        )
        head = HeadParams(
            records["head.weight"][0].astype(np.float32),
            records["head.bias"][0].astype(np.float32),
        )
    except KeyError as e:
        raise IngestionError(f"quant checkpoint missing tensor {e.args[0]!r}") from e
    return qb, head
