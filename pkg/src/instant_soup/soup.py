"""Instant model soup: denoise a dense checkpoint by greedy interpolation with weak sparse candidates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import subsample
from .engine.models import Model, accuracy, forward
from .engine.optim import AdamW
from .engine.tensor import cross_entropy
from .engine.training import Checkpoint, DataStream, train_steps
from .ledger import BudgetLedger
from .pruning.criteria import magnitude_prune
from .rng import derive_rng

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class SoupConfig:
    n_candidates: int = 4
    sparsities: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    weak_steps: int = 100
    lr_multipliers: tuple[float, ...] = (0.5, 1.0, 2.0)
    weight_decays: tuple[float, ...] = (0.0, 0.1)
    grid: tuple[float, ...] = DEFAULT_GRID
    subset_fraction: float = 0.10
    metric: str = "accuracy"

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("soup needs at least one candidate (K >= 1)")
        if not self.sparsities or any(not 0.0 < s < 1.0 for s in self.sparsities):
            raise ValueError("every candidate sparsity must lie in (0, 1)")
        if self.weak_steps < 0:
            raise ValueError("weak-training steps must be >= 0")
        if 0.0 not in self.grid:
            raise ValueError("interpolation grid must contain 0 so the current model can always be kept")
        if any(not 0.0 <= a <= 1.0 for a in self.grid):
            raise ValueError("interpolation coefficients must lie in [0, 1]")
        if self.metric not in ("accuracy", "loss"):
            raise ValueError(f"metric must be 'accuracy' or 'loss', got {self.metric!r}")

    def sparsity(self, k: int) -> float:
        # round-robin over the pool
        return self.sparsities[k % len(self.sparsities)]


def weak_train_candidate(pretrained: Model, sparsity: float, protocol: tuple[float, float], steps: int,
                         subset: np.ndarray, data, *, batch_size: int = 32, seed: int = 0,
                         ledger: BudgetLedger | None = None, tag: str = "weak") -> dict[str, np.ndarray]:
    """Prune ``pretrained`` at ``sparsity``, train the sparse net briefly, then densify.

    ``protocol`` is (learning rate, weight decay). Surviving coordinates keep
    their trained values; pruned ones go back to the pretrained values.
    """
    theta0 = pretrained.state()
    mask = magnitude_prune(pretrained, pretrained.ones_mask(), sparsity)
    if steps == 0:
        return theta0
    lr, wd = protocol
    opt = AdamW(base_lr=lr, weight_decay=wd, constant_lr=True)
    stream = DataStream(np.asarray(subset), batch_size, seed=seed, name=tag)
    work = Checkpoint(pretrained.copy(), opt, stream)
    train_steps(work, data, steps, mask=mask, ledger=ledger, phase="weak_train")
    out = work.model.state()
    for name, _ in mask.registry:
        keep = mask.bits[name]
        out[name] = np.where(keep, out[name], theta0[name])
    return out


def _mix(current: dict, candidate: dict, alpha: float) -> dict:
    if alpha == 0.0:
        return {k: v.copy() for k, v in current.items()}
    if alpha == 1.0:
        return {k: v.copy() for k, v in candidate.items()}
    return {k: (1.0 - alpha) * current[k] + alpha * candidate[k] for k in current}


def _score(model: Model, x, y, metric: str) -> float:
    if metric == "accuracy":
        return accuracy(model, x, y)
    return -float(cross_entropy(forward(model, x), y).data)


def interpolate_greedy(candidate: dict, current: dict, template: Model, val: tuple[np.ndarray, np.ndarray],
                       grid=DEFAULT_GRID, metric: str = "accuracy",
                       ledger: BudgetLedger | None = None) -> tuple[dict, float, float]:
    """Best point on the segment current -> candidate by validation score.

    Returns (parameters, alpha, score). Ties go to the smaller alpha.
    """
    if set(candidate) != set(current) or any(candidate[k].shape != current[k].shape for k in current):
        raise ValueError("candidate and current parameters do not share a registry")
    x, y = val
    if len(y) == 0:
        raise ValueError("interpolation needs a non-empty validation set")
    probe = template.copy()
    best = None
    for alpha in sorted(float(a) for a in grid):
        theta = _mix(current, candidate, alpha)
        probe.load_state(theta)
        score = _score(probe, x, y, metric)
        if ledger is not None:
            ledger.charge_eval(len(y), sum(p.data.size for p in probe.prunable()))
        if best is None or score > best[2]:
            best = (theta, alpha, score)
    return best


def uniform_soup(candidates: list[dict]) -> dict:
    """Coordinate-wise mean of the candidates."""
    if not candidates:
        raise ValueError("uniform soup needs at least one candidate")
    return {k: np.mean([c[k] for c in candidates], axis=0) for k in candidates[0]}


def ims_run(pretrained: Checkpoint, config: SoupConfig, data, ledger: BudgetLedger | None = None, *,
            lr: float = 1e-3, batch_size: int = 32, seed: int = 0):
    """Greedy soup over ``config.n_candidates`` weak candidates.

    Returns (checkpoint, soup log, candidates). The log has one row per
    candidate with the chosen alpha and validation scores around the step.
    """
    base = pretrained.model
    val = data.split("val")
    current = base.state()
    probe = base.copy()
    score = _score(probe, *val, config.metric)
    log, candidates = [], []
    for k in range(config.n_candidates):
        rng = derive_rng(seed, "soup", k)
        s_k = config.sparsity(k)
        mult = float(config.lr_multipliers[rng.integers(len(config.lr_multipliers))])
        wd = float(config.weight_decays[rng.integers(len(config.weight_decays))])
        subset = subsample(data.train, config.subset_fraction, rng)
        if subset.size == 0:
            subset = np.asarray(data.train)
        cand = weak_train_candidate(base, s_k, (lr * mult, wd), config.weak_steps, subset, data,
                                    batch_size=batch_size, seed=int(rng.integers(2**63)), ledger=ledger,
                                    tag=f"weak-{k}")
        candidates.append(cand)
        before = score
        current, alpha, score = interpolate_greedy(cand, current, probe, val, config.grid, config.metric, ledger)
        log.append({"k": k, "sparsity": s_k, "lr": lr * mult, "weight_decay": wd, "alpha": alpha,
                    "val_before": before, "val_after": score})
    out_model = base.copy()
    out_model.load_state(current)
    out = Checkpoint(out_model, pretrained.optimizer.copy(), pretrained.stream.copy(), pretrained.step,
                     dict(pretrained.meta, kind="ims", val_accuracy=accuracy(out_model, *val)))
    return out, log, candidates


def soup_accuracy(template: Model, params: dict, data, split: str = "test") -> float:
    probe = template.copy()
    probe.load_state(params)
    return accuracy(probe, *data.split(split))
