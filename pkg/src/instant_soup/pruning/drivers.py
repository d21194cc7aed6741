"""End-to-end pruning runs: ISP, IMP / LTH(-rewind), progressive and one-shot baselines.

All drivers start from a pretrained checkpoint, never mutate it, and return
``(final checkpoint, final mask, metrics)``. ``metrics["masks"]`` lists the
mask after every prune call.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..data import evaluate
from ..engine.training import Checkpoint, fresh_checkpoint, train_steps
from ..ledger import BudgetExceeded, BudgetLedger
from ..masks import Mask, density, is_subset
from ..rng import derive_rng
from .criteria import kept_for_sparsity, magnitude_prune, random_prune, removal_count, snip_prune
from .denoise import denoised_prune
from .schedule import DenoiserConfig, PruneSchedule, ScheduleError, calls_closed_form, calls_needed, triangular_total


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.1
    batch_size: int = 32
    seed: int = 0


class PruneError(RuntimeError):
    pass


def _check_call(prev: Mask, new: Mask, expected_kept: int) -> None:
    if not is_subset(new, prev):
        raise PruneError("prune call revived weights")
    if abs(new.kept - expected_kept) > 1:
        raise PruneError(f"prune call kept {new.kept} weights, expected {expected_kept}")


def _metrics(ckpt: Checkpoint, mask: Mask, data, ledger: BudgetLedger, target_kept: int, masks: list[Mask],
             **extra) -> dict:
    rep = density(mask)
    out = {
        "val_accuracy": evaluate(ckpt, data, "val"),
        "test_accuracy": evaluate(ckpt, data, "test"),
        "sparsity": rep.sparsity,
        "kept": rep.kept,
        "target_kept": target_kept,
        "total_prunable": rep.total,
        "prune_calls": len(masks),
        "ledger": ledger.summary(),
        "masks": masks,
    }
    out.update(extra)
    return out


def validate_isp(schedule: PruneSchedule, denoiser: DenoiserConfig, total_prunable: int,
                 start_kept: int | None = None) -> dict:
    """Check that the target is reachable within the loop and the budget; return the plan."""
    start = total_prunable if start_kept is None else start_kept
    target = kept_for_sparsity(total_prunable, schedule.target_sparsity)
    calls = calls_needed(start, target, schedule.rate) if start > target else 0
    k = schedule.k
    if calls > k + 1:
        r = calls_closed_form(schedule.rate, schedule.target_sparsity)
        raise ScheduleError(f"sparsity {schedule.target_sparsity} needs r = {r} prune calls at rate {schedule.rate} "
                            f"({calls} with integer rounding) but the mask budget M={schedule.mask_budget} "
                            f"with t={schedule.seed_steps} allows only k+1 = {k + 1}")
    loop_steps = triangular_total(schedule.seed_steps, calls - 1) if calls else 0
    lookahead_steps = calls * denoiser.lookahead_per_call
    if loop_steps + lookahead_steps > schedule.total_budget:
        raise BudgetExceeded(f"mask generation needs {loop_steps} training + {lookahead_steps} look-ahead steps, "
                             f"more than the budget T={schedule.total_budget}")
    return {"calls": calls, "k": k, "target_kept": target, "loop_steps": loop_steps,
            "lookahead_steps": lookahead_steps,
            "finetune_steps": schedule.total_budget - loop_steps - lookahead_steps}


def isp_run(pretrained: Checkpoint, schedule: PruneSchedule, denoiser: DenoiserConfig, data,
            ledger: BudgetLedger, train: TrainConfig = TrainConfig(), *, initial_mask: Mask | None = None):
    """Instant Soup Pruning under a single budget of ``schedule.total_budget`` steps."""
    model = pretrained.model
    mask = initial_mask if initial_mask is not None else model.ones_mask()
    plan = validate_isp(schedule, denoiser, mask.size, mask.kept)
    target = plan["target_kept"]
    # learning rate decays to zero over the steps the main trajectory will actually take
    main_steps = schedule.total_budget - plan["lookahead_steps"]
    ckpt = fresh_checkpoint(model, data.train, lr=train.lr, weight_decay=train.weight_decay,
                            total_steps=max(main_steps, 1), batch_size=train.batch_size, seed=train.seed,
                            stream_name="isp")
    ckpt.model.apply_mask(mask)
    ledger.budget = ledger.total_steps + schedule.total_budget
    start = ledger.total_steps
    masks = []
    for i in range(schedule.k + 1):
        if mask.kept <= target:
            break
        train_steps(ckpt, data, (i + 1) * schedule.seed_steps, mask=mask, ledger=ledger, phase="mask_generation")
        expected = mask.kept - removal_count(mask.kept, schedule.rate, target)
        new = denoised_prune(ckpt, mask, denoiser, schedule.rate, data, ledger, min_kept=target,
                             seed=train.seed, call_index=i)
        _check_call(mask, new, expected)
        mask = new
        ckpt.model.apply_mask(mask)
        masks.append(mask)
    if mask.kept > target:
        raise ScheduleError("loop ended before reaching the target sparsity")
    finetune = schedule.total_budget - (ledger.total_steps - start)
    train_steps(ckpt, data, finetune, mask=mask, ledger=ledger, phase="finetune")
    if ledger.total_steps - start > schedule.total_budget:
        raise BudgetExceeded("ISP spent more than its budget")
    return ckpt, mask, _metrics(ckpt, mask, data, ledger, target, masks, method="isp", plan=plan)


def _rewound(weights: Checkpoint, data, mask: Mask, horizon: int, train: TrainConfig, name: str) -> Checkpoint:
    ckpt = fresh_checkpoint(weights.model, data.train, lr=train.lr, weight_decay=train.weight_decay,
                            total_steps=max(horizon, 1), batch_size=train.batch_size, seed=train.seed,
                            stream_name=name)
    ckpt.model.apply_mask(mask)
    return ckpt


def imp_run(pretrained: Checkpoint, rounds: int, per_round_budget: int, rate: float, data, ledger: BudgetLedger,
            train: TrainConfig = TrainConfig(), *, rewind_step: int = 0, target_sparsity: float | None = None,
            finetune_budget: int | None = None):
    """Iterative magnitude pruning with rewinding.

    Every round trains ``per_round_budget`` steps from the rewind point with a
    fresh optimizer, prunes ``rate`` of the survivors, and rewinds. The final
    ticket is then trained for ``finetune_budget`` steps (default: one round).
    ``rewind_step=0`` rewinds to the pretrained weights (original LTH).
    """
    if rounds < 1:
        raise ScheduleError("IMP needs at least one round")
    if not 0 <= rewind_step <= per_round_budget:
        raise ScheduleError("rewind step must lie within the first round")
    finetune_budget = per_round_budget if finetune_budget is None else finetune_budget
    mask = pretrained.model.ones_mask()
    target = kept_for_sparsity(mask.size, target_sparsity) if target_sparsity is not None else None
    if target is not None and calls_needed(mask.size, target, rate) > rounds:
        need = calls_needed(mask.size, target, rate)
        raise ScheduleError(f"{rounds} IMP rounds at rate {rate} cannot reach sparsity {target_sparsity}; "
                            f"r = {need} rounds are needed")
    rewind_point = pretrained
    masks = []
    for r in range(rounds):
        if target is not None and mask.kept <= target:
            break
        ckpt = _rewound(rewind_point, data, mask, per_round_budget, train, f"imp-round-{r}")
        if r == 0 and rewind_step:
            train_steps(ckpt, data, rewind_step, mask=mask, ledger=ledger, phase="mask_generation")
            rewind_point = ckpt.copy()
            train_steps(ckpt, data, per_round_budget - rewind_step, mask=mask, ledger=ledger, phase="mask_generation")
        else:
            train_steps(ckpt, data, per_round_budget, mask=mask, ledger=ledger, phase="mask_generation")
        expected = mask.kept - removal_count(mask.kept, rate, target)
        new = magnitude_prune(ckpt.model, mask, rate, min_kept=target)
        _check_call(mask, new, expected)
        mask = new
        masks.append(mask)
    final = _rewound(rewind_point, data, mask, finetune_budget, train, "imp-finetune")
    train_steps(final, data, finetune_budget, mask=mask, ledger=ledger, phase="finetune")
    target_kept = target if target is not None else mask.kept
    return final, mask, _metrics(final, mask, data, ledger, target_kept, masks, method="imp" if not rewind_step else "imp-rewind",
                                 rounds=rounds, rewind_step=rewind_step)


def oneshot_run(pretrained: Checkpoint, criterion: str, target_sparsity: float, total_budget: int, data,
                ledger: BudgetLedger, train: TrainConfig = TrainConfig()):
    """Prune once at step 0 straight to the target, then fine-tune for the whole budget."""
    mask = pretrained.model.ones_mask()
    target = kept_for_sparsity(mask.size, target_sparsity)
    rate = 1.0 - target / mask.size
    ckpt = _rewound(pretrained, data, mask, total_budget, train, "oneshot")
    if criterion == "magnitude":
        new = magnitude_prune(ckpt.model, mask, rate, min_kept=target)
    elif criterion == "random":
        new = random_prune(mask, rate, derive_rng(train.seed, "random-prune"), min_kept=target)
    elif criterion == "snip":
        rng = derive_rng(train.seed, "snip-batch")
        idx = rng.choice(data.train, size=min(train.batch_size, len(data.train)), replace=False)
        new = snip_prune(ckpt, mask, rate, (data.inputs[idx], data.labels[idx]), min_kept=target)
    else:
        raise ValueError(f"unknown one-shot criterion {criterion!r}")
    _check_call(mask, new, target)
    ckpt.model.apply_mask(new)
    ledger.budget = ledger.total_steps + total_budget
    train_steps(ckpt, data, total_budget, mask=new, ledger=ledger, phase="finetune")
    name = {"magnitude": "oneshot"}.get(criterion, criterion)
    return ckpt, new, _metrics(ckpt, new, data, ledger, target, [new], method=name)


def progressive_prune_run(pretrained: Checkpoint, n_prunes: int, target_sparsity: float, total_budget: int, data,
                          ledger: BudgetLedger, train: TrainConfig = TrainConfig(), *, rate: float | None = None):
    """Periodic magnitude pruning followed by retraining, ``total_budget // n_prunes`` steps apart.

    Prunes happen at steps 0, T/k', 2T/k', ...; the final call lands exactly on
    the target. Without an explicit ``rate`` the per-call rate is
    ``1 - (1 - S)^(1/k')``.
    """
    if n_prunes < 1:
        raise ScheduleError("progressive pruning needs at least one prune")
    mask = pretrained.model.ones_mask()
    target = kept_for_sparsity(mask.size, target_sparsity)
    if rate is None:
        rate = 1.0 - (1.0 - target_sparsity) ** (1.0 / n_prunes)
    interval = total_budget // n_prunes
    ckpt = _rewound(pretrained, data, mask, total_budget, train, "progressive")
    ledger.budget = ledger.total_steps + total_budget
    start = ledger.total_steps
    masks = []
    for j in range(n_prunes):
        if mask.kept > target:
            if j == n_prunes - 1:
                call_rate = 1.0 - target / mask.kept
            else:
                call_rate = rate
            expected = mask.kept - removal_count(mask.kept, call_rate, target)
            new = magnitude_prune(ckpt.model, mask, call_rate, min_kept=target)
            _check_call(mask, new, expected)
            mask = new
            ckpt.model.apply_mask(mask)
            masks.append(mask)
        steps = interval if j < n_prunes - 1 else total_budget - (ledger.total_steps - start)
        train_steps(ckpt, data, steps, mask=mask, ledger=ledger, phase="finetune" if mask.kept <= target else "mask_generation")
    return ckpt, mask, _metrics(ckpt, mask, data, ledger, target, masks, method="progressive", n_prunes=n_prunes)
