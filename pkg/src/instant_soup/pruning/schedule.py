"""Prune schedules and denoiser settings."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .criteria import removal_count


class ScheduleError(ValueError):
    pass


def triangular_total(t: int, k: int) -> int:
    """Training steps spent by loop iterations 0..k: sum of (i + 1) * t."""
    return t * (k + 1) * (k + 2) // 2


def max_iterations(t: int, mask_budget: int) -> int:
    """Largest k with sum_{i=0}^{k} (i+1) t <= mask_budget (-1 if even k=0 does not fit)."""
    k = -1
    while triangular_total(t, k + 1) <= mask_budget:
        k += 1
    return k


def calls_closed_form(rate: float, sparsity: float) -> int:
    """ceil(ln(1-S) / ln(1-s)): prune calls needed ignoring integer rounding."""
    if sparsity <= 0:
        return 0
    return math.ceil(math.log(1.0 - sparsity) / math.log(1.0 - rate) - 1e-12)


def calls_needed(kept: int, target_kept: int, rate: float) -> int:
    """Exact number of clamped prune calls from ``kept`` down to ``target_kept``."""
    calls = 0
    while kept > target_kept:
        n = removal_count(kept, rate, target_kept)
        if n == 0:
            raise ScheduleError(f"rate {rate} removes nothing from {kept} weights; target {target_kept} unreachable")
        kept -= n
        calls += 1
    return calls


@dataclass(frozen=True)
class PruneSchedule:
    seed_steps: int
    rate: float
    target_sparsity: float
    mask_budget: int
    total_budget: int

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ScheduleError(f"compression rate must lie in (0, 1), got {self.rate}")
        if not 0.0 < self.target_sparsity < 1.0:
            raise ScheduleError(f"target sparsity must lie in (0, 1), got {self.target_sparsity}")
        if self.seed_steps < 1:
            raise ScheduleError("seed steps t must be >= 1")
        if self.mask_budget > self.total_budget:
            raise ScheduleError(f"mask budget M={self.mask_budget} exceeds total budget T={self.total_budget}")

    @property
    def k(self) -> int:
        return max_iterations(self.seed_steps, self.mask_budget)


@dataclass(frozen=True)
class DenoiserConfig:
    n_denoisers: int
    lookahead_steps: int
    lr_multipliers: tuple[float, ...] = (0.5, 1.0, 2.0)
    weight_decays: tuple[float, ...] = (0.0, 0.1)
    subset_fraction: float = 0.10
    fresh_optimizer: bool = True
    adjust_by: str = "snapshot"

    def __post_init__(self):
        if self.n_denoisers < 0:
            raise ValueError("denoiser count must be >= 0")
        # 10..100 is the usual range, but the look-ahead sweep goes up to 200
        if self.n_denoisers and self.lookahead_steps < 1:
            raise ValueError("look-ahead steps must be >= 1")
        if self.adjust_by not in ("snapshot", "lookahead_mean"):
            raise ValueError(f"adjust_by must be 'snapshot' or 'lookahead_mean', got {self.adjust_by!r}")

    @property
    def lookahead_per_call(self) -> int:
        return self.n_denoisers * self.lookahead_steps
