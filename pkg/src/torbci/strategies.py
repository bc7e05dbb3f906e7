"""Continual-learning ingredients: reservoir replay buffer and the
distillation-regularized loss used to protect earlier-session knowledge.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ParameterError


class ReplayBuffer:
    """Fixed-capacity uniform sample of an unbounded stream (Algorithm R).

    After n offers every offered item is retained with probability
    capacity/n. Stores raw (trial, label) pairs so full-model finetuning
    on replayed data stays possible.
    """

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ParameterError("buffer capacity must be at least 1")
        self.capacity = capacity
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
        self._items: list[tuple[np.ndarray, int]] = []
        self.n_seen = 0

    def offer(self, trial: np.ndarray, label: int) -> None:
        self.n_seen += 1
        if len(self._items) < self.capacity:
            self._items.append((np.array(trial, dtype=np.float32), int(label)))
        else:
            slot = int(self.rng.integers(0, self.n_seen))
            if slot < self.capacity:
                self._items[slot] = (np.array(trial, dtype=np.float32), int(label))

    def items(self) -> list[tuple[np.ndarray, int]]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


def soften(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    return F.softmax(logits / temperature, dim=-1)


def lwf_loss(
    new_logits: torch.Tensor,
    old_logits: torch.Tensor,
    label: torch.Tensor,
    lambda_o: float = 1.0,
    temperature: float = 2.0,
) -> torch.Tensor:
    """Cross-entropy plus lambda_o times the distillation term.

    The distillation term is the cross-entropy (nats) between the softened
    pre-update outputs (target, detached) and the softened current outputs;
    at lambda_o = 0 this is exactly the plain cross-entropy loss.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    ce = F.cross_entropy(new_logits, label)
    if lambda_o == 0.0:
        return ce
    target = soften(old_logits.detach(), temperature)
    kd = -(target * F.log_softmax(new_logits / temperature, dim=-1)).sum(dim=-1).mean()
    return ce + lambda_o * kd
