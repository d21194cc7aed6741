"""Denoised pruning: union of look-ahead magnitude masks, trimmed back to size."""

from __future__ import annotations

import numpy as np

from ..data import subsample
from ..engine.optim import AdamW
from ..engine.training import Checkpoint, DataStream, train_steps
from ..ledger import BudgetLedger
from ..masks import Mask, is_subset, union
from ..rng import derive_rng
from .criteria import magnitude_prune, one_shot_adjust, removal_count
from .schedule import DenoiserConfig


def sample_protocol(config: DenoiserConfig, rng: np.random.Generator) -> tuple[float, float]:
    """(learning-rate multiplier, weight decay) for one look-ahead run."""
    mult = float(config.lr_multipliers[rng.integers(len(config.lr_multipliers))])
    wd = float(config.weight_decays[rng.integers(len(config.weight_decays))])
    return mult, wd


def lookahead(snapshot: Checkpoint, data, mask: Mask, config: DenoiserConfig, rng: np.random.Generator,
              ledger: BudgetLedger | None, tag: str) -> Checkpoint:
    """Train a copy of ``snapshot`` for ``config.lookahead_steps`` steps on a random data subset."""
    mult, wd = sample_protocol(config, rng)
    subset = subsample(data.train, config.subset_fraction, rng)
    if subset.size == 0:
        subset = np.asarray(data.train)
    lr = snapshot.optimizer.current_lr() * mult
    if config.fresh_optimizer:
        opt = AdamW(base_lr=lr, weight_decay=wd, betas=snapshot.optimizer.betas, eps=snapshot.optimizer.eps,
                    constant_lr=True)
    else:
        opt = snapshot.optimizer.copy()
        opt.base_lr, opt.weight_decay, opt.constant_lr = lr, wd, True
    stream = DataStream(subset, snapshot.stream.batch_size, seed=int(rng.integers(2**63)), name=tag)
    work = Checkpoint(snapshot.model.copy(), opt, stream, snapshot.step)
    return train_steps(work, data, config.lookahead_steps, mask=mask, ledger=ledger, phase="lookahead")


def denoised_prune(ckpt: Checkpoint, current_mask: Mask, config: DenoiserConfig, rate: float, data,
                   ledger: BudgetLedger | None = None, *, min_kept: int | None = None, seed: int = 0,
                   call_index: int = 0) -> Mask:
    """One denoised prune call; ``ckpt`` itself is never modified.

    Each of the N look-aheads starts from the same snapshot with its own
    protocol, data subset and random stream. Candidate masks only consider
    weights ``current_mask`` keeps.
    """
    total_la = config.lookahead_per_call
    if ledger is not None:
        ledger.require(total_la, f"denoised prune call {call_index} ({config.n_denoisers} x {config.lookahead_steps} look-ahead)")
    n_remove = removal_count(current_mask.kept, rate, min_kept)
    target_kept = current_mask.kept - n_remove
    snapshot_model = ckpt.model

    merged = magnitude_prune(snapshot_model, current_mask, rate, min_kept=min_kept)
    lookahead_weights = []
    for n in range(config.n_denoisers):
        rng = derive_rng(seed, "denoiser", call_index, n)
        la = lookahead(ckpt, data, current_mask, config, rng, ledger, tag=f"lookahead-{call_index}-{n}")
        candidate = magnitude_prune(la.model, current_mask, rate, min_kept=min_kept)
        merged = union(merged, candidate)
        if config.adjust_by == "lookahead_mean":
            lookahead_weights.append({name: la.model.params[name].data for name, _ in current_mask.registry})

    if config.adjust_by == "lookahead_mean" and lookahead_weights:
        scores = {}
        for name, _ in current_mask.registry:
            stack = [np.abs(snapshot_model.params[name].data)] + [np.abs(w[name]) for w in lookahead_weights]
            scores[name] = np.mean(stack, axis=0)
        result = one_shot_adjust(merged, scores, target_kept)
    else:
        result = one_shot_adjust(merged, snapshot_model, target_kept)
    assert is_subset(result, current_mask)
    return result
