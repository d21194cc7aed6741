"""Deterministic data streams, checkpoints and the inner training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..ledger import BudgetLedger
from ..masks import Mask
from ..rng import derive_rng
from .models import Model, forward
from .optim import AdamW
from .tensor import cross_entropy


class NumericError(FloatingPointError):
    """Raised when a training loss turns NaN or infinite."""


@dataclass
class DataStream:
    """Endless shuffled batches over a fixed index set.

    The order of epoch ``e`` is a pure function of ``(seed, e)``, so the
    stream position is fully described by ``(epoch, cursor)``.
    """

    indices: np.ndarray
    batch_size: int
    seed: int
    name: str = "train"
    epoch: int = 0
    cursor: int = 0
    _order: np.ndarray | None = field(default=None, repr=False, compare=False)
    _order_epoch: int = field(default=-1, repr=False, compare=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size == 0:
            raise ValueError("data stream needs at least one example")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def _epoch_order(self) -> np.ndarray:
        if self._order_epoch != self.epoch:
            self._order = derive_rng(self.seed, "data-order", self.name, self.epoch).permutation(self.indices)
            self._order_epoch = self.epoch
        return self._order

    def next_batch(self) -> np.ndarray:
        n = self.indices.size
        bs = min(self.batch_size, n)
        if self.cursor + bs > n:
            self.epoch += 1
            self.cursor = 0
        order = self._epoch_order()
        batch = order[self.cursor:self.cursor + bs]
        self.cursor += bs
        return batch

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.indices.size // min(self.batch_size, self.indices.size))

    def position(self) -> tuple[int, int]:
        return self.epoch, self.cursor

    def copy(self) -> "DataStream":
        return DataStream(self.indices.copy(), self.batch_size, self.seed, self.name, self.epoch, self.cursor)

    def same_state(self, other: "DataStream") -> bool:
        return (np.array_equal(self.indices, other.indices) and self.batch_size == other.batch_size
                and self.seed == other.seed and self.name == other.name and self.position() == other.position())


@dataclass
class Checkpoint:
    model: Model
    optimizer: AdamW
    stream: DataStream
    step: int = 0
    meta: dict = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.model.copy(), self.optimizer.copy(), self.stream.copy(), self.step, dict(self.meta))


def train_steps(ckpt: Checkpoint, data, n_steps: int, mask: Mask | None = None,
                ledger: BudgetLedger | None = None, phase: str = "finetune") -> Checkpoint:
    """Run exactly ``n_steps`` optimizer steps on ``ckpt`` in place and return it.

    ``data`` is anything with ``inputs`` and ``labels`` arrays indexed by the
    stream's indices. Pruned weights are zeroed before the first step and
    after every update.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if n_steps == 0:
        return ckpt
    model = ckpt.model
    model.apply_mask(mask)
    kept = mask.kept if mask is not None else sum(p.data.size for p in model.prunable())
    total = mask.size if mask is not None else kept
    sparsity = 1.0 - kept / total if total else 0.0
    for _ in range(n_steps):
        idx = ckpt.stream.next_batch()
        model.zero_grad()
        loss = cross_entropy(forward(model, data.inputs[idx]), data.labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericError(f"loss became {value} at step {ckpt.step}")
        loss.backward()
        lr = ckpt.optimizer.step(model, mask=mask)
        ckpt.step += 1
        if ledger is not None:
            ledger.charge_step(phase, kept, lr, value, sparsity)
    model.zero_grad()
    return ckpt


def fresh_checkpoint(model: Model, train_indices, *, lr: float, weight_decay: float, total_steps: int,
                     batch_size: int, seed: int, stream_name: str = "train") -> Checkpoint:
    """Wrap ``model`` (copied) with a new optimizer and a new data stream."""
    opt = AdamW(base_lr=lr, weight_decay=weight_decay, total_steps=max(1, total_steps))
    stream = DataStream(np.asarray(train_indices), batch_size, seed=seed, name=stream_name)
    return Checkpoint(model.copy(), opt, stream)
