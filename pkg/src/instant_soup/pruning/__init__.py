"""Mask-producing procedures and the pruning drivers built on them."""

from .criteria import (
    kept_for_sparsity, magnitude_prune, one_shot_adjust, random_prune, removal_count, snip_prune, snip_saliency,
)
from .denoise import denoised_prune
from .drivers import (
    PruneError, TrainConfig, imp_run, isp_run, oneshot_run, progressive_prune_run, validate_isp,
)
from .schedule import (
    DenoiserConfig, PruneSchedule, ScheduleError, calls_closed_form, calls_needed, max_iterations, triangular_total,
)

__all__ = [
    "DenoiserConfig", "PruneError", "PruneSchedule", "ScheduleError", "TrainConfig", "calls_closed_form",
    "calls_needed", "denoised_prune", "imp_run", "isp_run", "kept_for_sparsity", "magnitude_prune",
    "max_iterations", "one_shot_adjust", "oneshot_run", "progressive_prune_run", "random_prune", "removal_count",
    "snip_prune", "snip_saliency", "triangular_total", "validate_isp",
]
