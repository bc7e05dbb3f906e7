"""Compact depthwise-separable CNN for two-class EEG trials, with training
utilities for two scopes (full model vs. linear head only).

Layout is channels-last-free Conv1d over (batch, electrodes, samples):
spatial collapse of the 8 electrodes into 32 filters, a 128-tap depthwise
temporal stage, a depthwise-separable stage, two max-pool-by-8 stages, and
a 2-way linear head over the flattened 32 x 29 = 928 features.

Convolutions are cross-correlations (no kernel flip). Stages that preserve
length pad asymmetrically for even kernels: left (k-1)//2, right k//2.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import IngestionError, ParameterError, TrainingError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

FULL, HEAD = "full", "head"


@dataclass(frozen=True)
class ArchSpec:
    """Architecture hyperparameters; feature_dim follows from pooling."""

    n_channels: int = 8
    n_samples: int = 1900
    n_filters: int = 32
    temporal_kernel: int = 128
    ds_kernel: int = 16
    pool1: int = 8
    pool2: int = 8
    n_classes: int = 2

    @property
    def feature_dim(self) -> int:
        return self.n_filters * ((self.n_samples // self.pool1) // self.pool2)


def _same_pad(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k // 2


class MIBMINet(nn.Module):
    """Forward pass returns (logits, features)."""

    def __init__(self, arch: ArchSpec = ArchSpec()):
        super().__init__()
        self.arch = arch
        f = arch.n_filters
        self.spatial = nn.Conv1d(arch.n_channels, f, kernel_size=1, bias=False)
        self.bn1 = nn.BatchNorm1d(f, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.temporal = nn.Conv1d(f, f, kernel_size=arch.temporal_kernel, groups=f, bias=False)
        self.bn2 = nn.BatchNorm1d(f, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.pool1 = nn.MaxPool1d(arch.pool1)
        self.ds_depthwise = nn.Conv1d(f, f, kernel_size=arch.ds_kernel, groups=f, bias=False)
        self.pointwise = nn.Conv1d(f, f, kernel_size=1, bias=False)
        self.bn3 = nn.BatchNorm1d(f, eps=BN_EPS, momentum=BN_MOMENTUM)
        self.pool2 = nn.MaxPool1d(arch.pool2)
        self.head = nn.Linear(arch.feature_dim, arch.n_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        a = self.arch
        x = self.bn1(self.spatial(x))
        x = F.pad(x, _same_pad(a.temporal_kernel))
        x = self.pool1(F.relu(self.bn2(self.temporal(x))))
        x = F.pad(x, _same_pad(a.ds_kernel))
        x = self.pointwise(self.ds_depthwise(x))
        x = self.pool2(F.relu(self.bn3(x)))
        return torch.flatten(x, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 3 or x.shape[1:] != (self.arch.n_channels, self.arch.n_samples):
            raise ParameterError(
                f"expected (batch, {self.arch.n_channels}, {self.arch.n_samples}), got {tuple(x.shape)}"
            )
        feat = self.features(x)
        return self.head(feat), feat


def init_model(arch: ArchSpec = ArchSpec(), seed: int = 0) -> MIBMINet:
    """Seeded construction (Kaiming-uniform convs/head, BN at identity)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = MIBMINet(arch)
    return model


def clone_model(model: MIBMINet) -> MIBMINet:
    clone = MIBMINet(model.arch)
    clone.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
    return clone


def loss_ce(logits: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Numerically stable softmax cross-entropy (natural log)."""
    return F.cross_entropy(logits, label)


@dataclass
class TrainConfig:
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 10
    scope: str = FULL  # full | head
    optimizer: str = "adam"  # adam | sgd
    seed: int = 0

    def __post_init__(self):
        if self.scope not in (FULL, HEAD):
            raise ParameterError(f"scope must be 'full' or 'head', got {self.scope!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        # lr=0 / epochs=0 are permitted so no-op updates stay testable.
        if self.lr < 0 or self.epochs < 0:
            raise ParameterError("lr and epochs must be non-negative")


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    return torch.optim.SGD(params, lr=cfg.lr)


class Trainer:
    """Gradient steps over one scope of the model.

    Head scope freezes the backbone and keeps BN on its running statistics;
    full scope uses batch statistics and updates them (momentum 0.1).
    """

    def __init__(self, model: MIBMINet, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        if cfg.scope == HEAD:
            self.parameters = list(model.head.parameters())
        else:
            self.parameters = list(model.parameters())
        for p in model.parameters():
            p.requires_grad_(False)
        for p in self.parameters:
            p.requires_grad_(True)
        self.optimizer = make_optimizer(self.parameters, cfg)
        self.n_steps = 0

    def step(self, x: torch.Tensor, y: torch.Tensor, loss_fn=None) -> float:
        """One optimizer update on a batch; returns the mean loss."""
        if x.shape[0] == 0:
            raise ParameterError("empty batch")
        self.model.train(self.cfg.scope == FULL)
        logits, _ = self.model(x)
        loss = loss_fn(logits, y) if loss_fn is not None else loss_ce(logits, y)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {self.n_steps}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        for p in self.parameters:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient at step {self.n_steps}")
        self.optimizer.step()
        self.n_steps += 1
        return float(loss.detach())


def to_batch(data: np.ndarray, labels: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))
    if x.ndim == 2:
        x = x.unsqueeze(0)
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64)).reshape(-1)
    return x, y


def evaluate(model: MIBMINet, data: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of trials whose argmax logit matches the label.

    Eval-mode BN; two-way ties resolve to class 0.
    """
    x, y = to_batch(data, labels)
    if x.shape[0] == 0:
        raise ParameterError("evaluate requires at least one trial")
    model.eval()
    with torch.inference_mode():
        logits, _ = model(x)
    pred = (logits[:, 1] > logits[:, 0]).to(torch.int64)
    return float((pred == y).sum()) / y.shape[0]


def predict_logits(model: MIBMINet, data: np.ndarray) -> np.ndarray:
    x, _ = to_batch(data, np.zeros(len(data) if data.ndim == 3 else 1))
    model.eval()
    with torch.inference_mode():
        logits, _ = model(x)
    return logits.numpy().copy()


def backbone_state(model: MIBMINet) -> dict[str, np.ndarray]:
    """All non-head tensors (for scope-isolation checks)."""
    return {
        k: v.detach().numpy().copy()
        for k, v in model.state_dict().items()
        if not k.startswith("head.")
    }


# ---------------------------------------------------------------------------
# Float checkpoint ("TORW"): magic, u32 version, then per-tensor records of
# (u16 name length, name bytes, u8 rank, u32 dims..., float32 payload).
# BN num_batches_tracked counters are not stored; momentum is fixed.
# ---------------------------------------------------------------------------

_W_MAGIC = b"TORW"
_W_VERSION = 1


def save_checkpoint(model: MIBMINet, path) -> None:
    with open(path, "wb") as f:
        f.write(_W_MAGIC)
        f.write(struct.pack("<I", _W_VERSION))
        for name, tensor in model.state_dict().items():
            if name.endswith("num_batches_tracked"):
                continue
            arr = tensor.detach().numpy().astype("<f4")
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path, arch: ArchSpec = ArchSpec()) -> MIBMINet:
    model = MIBMINet(arch)
    expected = {
        k: tuple(v.shape)
        for k, v in model.state_dict().items()
        if not k.endswith("num_batches_tracked")
    }
    loaded: dict[str, torch.Tensor] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _W_MAGIC:
            raise IngestionError(f"bad checkpoint magic {magic!r} at byte 0")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _W_VERSION:
            raise IngestionError(f"unsupported checkpoint version {version}")
        while True:
            head = f.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = f.read(name_len).decode()
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(dims)) if dims else 1
            payload = f.read(4 * n)
            if len(payload) != 4 * n:
                raise IngestionError(f"truncated tensor {name!r}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
            loaded[name] = torch.from_numpy(arr.copy())
    if set(loaded) != set(expected):
        missing = set(expected) - set(loaded)
        extra = set(loaded) - set(expected)
        raise IngestionError(f"checkpoint tensors mismatch: missing={missing}, extra={extra}")
    for name, arr in loaded.items():
        if tuple(arr.shape) != expected[name]:
            raise IngestionError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, expected {expected[name]}"
            )
    model.load_state_dict(loaded, strict=False)
    return model
