"""Adam with the constant-then-linear-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


def scheduled_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Constant ``base_lr`` for the first half of ``total_steps``, then linear decay to zero.

    ``step`` is zero-based. Steps at or past the horizon get 0.
    """
    if total_steps <= 0 or step >= total_steps:
        return 0.0
    half = total_steps // 2
    if step < half:
        return base_lr
    return base_lr * (total_steps - step) / (total_steps - half)


@dataclass
class AdamState:
    params: Sequence[Tensor]
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        if self.total_steps <= 0:
            return self.lr
        return scheduled_lr(self.lr, self.step, self.total_steps)


def adam_step(state: AdamState, grads: Sequence[np.ndarray | None]) -> list[Tensor]:
    """One bias-corrected Adam update on ``state.params``; returns the parameters.

    Parameters are replaced with new arrays rather than mutated, so tensors
    captured by an earlier tape keep the values they were recorded with.
    """
    if len(grads) != len(state.params):
        raise ValueError(f"{len(grads)} gradients for {len(state.params)} parameters")
    lr = state.current_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(state.params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {p.name}")
        g = g.astype(p.dtype, copy=False)
        m = state.m[i] = b1 * state.m[i] + (1 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
    return list(state.params)
