"""Global mask-producing criteria: magnitude, random, SNIP, and one-shot adjustment.

Every criterion only ever removes weights that the current mask keeps, so
the result is always a subset of the input mask. Scores are compared across
all prunable parameters at once; ties go to the smaller canonical flat index
(registry order, then row-major within a parameter).
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from ..engine.models import Model, forward
from ..engine.tensor import cross_entropy
from ..masks import Mask


def removal_count(kept: int, rate: float, min_kept: int | None = None) -> int:
    """How many weights a call at ``rate`` removes, never going below ``min_kept``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"prune rate must lie in [0, 1), got {rate}")
    # the epsilon absorbs binary representation error of decimal rates (0.29 * 100 -> 28.999...)
    n = int(math.floor(rate * kept + 1e-9))
    if min_kept is not None:
        n = min(n, max(kept - min_kept, 0))
    return n


def flat_weights(params: Model | Mapping[str, np.ndarray], mask: Mask) -> np.ndarray:
    """Prunable weights concatenated in the mask's registry order."""
    if isinstance(params, Model):
        arrays = {n: params.params[n].data for n, _ in mask.registry}
    else:
        arrays = params
    parts = []
    for name, shape in mask.registry:
        arr = np.asarray(arrays[name])
        if arr.shape != shape:
            raise ValueError(f"parameter {name!r} has shape {arr.shape}, mask expects {shape}")
        parts.append(arr.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def remove_lowest(mask: Mask, scores: np.ndarray, n_remove: int) -> Mask:
    """Drop the ``n_remove`` kept entries with the smallest score."""
    flat = mask.flat()
    kept_idx = np.flatnonzero(flat)
    if n_remove > kept_idx.size:
        raise ValueError(f"cannot remove {n_remove} weights from a mask keeping {kept_idx.size}")
    if n_remove <= 0:
        return mask
    order = kept_idx[np.argsort(scores[kept_idx], kind="stable")]
    out = flat.copy()
    out[order[:n_remove]] = False
    return Mask.from_flat(mask.registry, out)


def magnitude_prune(params, current_mask: Mask, rate: float, *, min_kept: int | None = None) -> Mask:
    n = removal_count(current_mask.kept, rate, min_kept)
    return remove_lowest(current_mask, np.abs(flat_weights(params, current_mask)), n)


def random_prune(current_mask: Mask, rate: float, rng: np.random.Generator, *, min_kept: int | None = None) -> Mask:
    n = removal_count(current_mask.kept, rate, min_kept)
    flat = current_mask.flat()
    kept_idx = np.flatnonzero(flat)
    drop = rng.choice(kept_idx, size=n, replace=False)
    out = flat.copy()
    out[drop] = False
    return Mask.from_flat(current_mask.registry, out)


def snip_saliency(model: Model, mask: Mask, batch: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """|w * dL/dw| on one labelled batch, evaluated at the masked weights."""
    work = model.copy()
    work.apply_mask(mask)
    work.zero_grad()
    x, y = batch
    cross_entropy(forward(work, x), y).backward()
    grads = {}
    for name, shape in mask.registry:
        g = work.params[name].tensor.grad
        grads[name] = np.zeros(shape) if g is None else g
    w = flat_weights(work, mask)
    g = flat_weights(grads, mask)
    return np.abs(w * g)


def snip_prune(ckpt_or_model, current_mask: Mask, rate: float, batch, *, min_kept: int | None = None) -> Mask:
    model = getattr(ckpt_or_model, "model", ckpt_or_model)
    n = removal_count(current_mask.kept, rate, min_kept)
    return remove_lowest(current_mask, snip_saliency(model, current_mask, batch), n)


def one_shot_adjust(union_mask: Mask, params, target_kept: int) -> Mask:
    """Trim ``union_mask`` to exactly ``target_kept`` weights by magnitude of ``params``."""
    kept = union_mask.kept
    if target_kept > kept:
        raise ValueError(f"target_kept={target_kept} exceeds the {kept} weights kept by the union; "
                         "adjustment never revives weights")
    if target_kept < 0:
        raise ValueError("target_kept must be non-negative")
    return remove_lowest(union_mask, np.abs(flat_weights(params, union_mask)), kept - target_kept)


def kept_for_sparsity(total: int, sparsity: float) -> int:
    """Surviving weight count at global ``sparsity`` (nearest integer)."""
    if not 0.0 <= sparsity < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    return total - int(round(sparsity * total))
