from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

# Paper-scale optimizer settings.
PAPER_LR = 3e-6
PAPER_WEIGHT_DECAY = 1e-7
PAPER_WARMUP_RATIO = 0.01
PAPER_CLIP_NORM = 10.0


def warmup_factor(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear ramp from 0 to 1 over the first ``warmup_ratio`` of steps, then 1."""
    warmup_steps = warmup_ratio * total_steps
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all gradients by a common factor so the global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm is None or total <= max_norm or total == 0.0:
        return list(grads), total
    factor = max_norm / total
    return [g * factor for g in grads], total


@dataclass
class OptimizerState:
    lr: float = PAPER_LR
    weight_decay: float = PAPER_WEIGHT_DECAY
    warmup_ratio: float = PAPER_WARMUP_RATIO
    clip_norm: float = PAPER_CLIP_NORM
    total_steps: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def effective_lr(self) -> float:
        return self.lr * warmup_factor(self.step, self.total_steps, self.warmup_ratio)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> float:
    """Clip, then apply one AdamW update in place. Returns the pre-clip gradient norm."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    grads, norm = clip_grad_norm(grads, state.clip_norm)
    lr = state.effective_lr()
    b1, b2 = state.betas
    t = state.step + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr == 0.0:
            continue
        p.data = p.data - lr * state.weight_decay * p.data
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    state.step += 1
    return norm


class AdamW:
    """Convenience wrapper that reads ``.grad`` off the parameters."""

    def __init__(self, params: Sequence[Tensor], **settings):
        self.params = list(params)
        self.state = OptimizerState(**settings)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        return adamw_step(self.params, grads, self.state)
