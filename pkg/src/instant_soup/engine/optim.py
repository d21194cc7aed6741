"""AdamW with decoupled weight decay and a linear-to-zero learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..masks import Mask
from .models import Model


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * (1.0 - step / total_steps)


@dataclass
class AdamW:
    """Optimizer state: per-parameter moments plus hyperparameters.

    ``total_steps`` is the horizon of the linear decay; ``constant_lr`` turns
    the schedule off (used for short look-ahead runs).
    """

    base_lr: float
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: int = 1
    constant_lr: bool = False
    step_count: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if self.constant_lr:
            return self.base_lr
        return lr_schedule(min(self.step_count, self.total_steps), self.total_steps, self.base_lr)

    def copy(self) -> "AdamW":
        return AdamW(
            self.base_lr, self.weight_decay, tuple(self.betas), self.eps, self.total_steps, self.constant_lr,
            self.step_count,
            {k: v.copy() for k, v in self.exp_avg.items()},
            {k: v.copy() for k, v in self.exp_avg_sq.items()},
        )

    def step(self, model: Model, lr: float | None = None, mask: Mask | None = None) -> float:
        """One update of every parameter holding a gradient; returns the lr used."""
        lr = self.current_lr() if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in model.params.items():
            g = p.tensor.grad
            if g is None:
                continue
            m = self.exp_avg.get(name)
            if m is None:
                m = self.exp_avg[name] = np.zeros_like(p.data)
                self.exp_avg_sq[name] = np.zeros_like(p.data)
            v = self.exp_avg_sq[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w = p.tensor.data
            if self.weight_decay:
                w -= lr * self.weight_decay * w
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        # pruned weights received gradient like any other; pin them back to zero
        model.apply_mask(mask)
        return lr
