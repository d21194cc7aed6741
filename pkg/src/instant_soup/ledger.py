"""Step and FLOP accounting per training phase."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .engine.models import ModelSpec, parameter_shapes

# phases that consume optimizer steps; "eval" only records forward passes
TRAIN_PHASES = ("mask_generation", "lookahead", "finetune", "weak_train", "pretrain")


class BudgetExceeded(RuntimeError):
    pass


def _macs_per_row(spec: ModelSpec) -> tuple[int, int, int]:
    """(prunable weight count, dense MACs per token, dense MACs per example)."""
    prunable_w = 0
    dense_tok = 0
    dense_ex = 0
    for name, shape, prunable in parameter_shapes(spec):
        if len(shape) != 2 or name.startswith("embed."):
            continue
        macs = shape[0] * shape[1]
        if prunable:
            prunable_w += macs
        elif name == "head.weight" and spec.kind == "tiny-transformer":
            dense_ex += macs
        else:
            dense_tok += macs
    return prunable_w, dense_tok, dense_ex


def prunable_weight_count(spec: ModelSpec) -> int:
    return _macs_per_row(spec)[0]


def flops_per_step(spec: ModelSpec, batch_size: int, density: float = 1.0, *, kept: int | None = None,
                   train: bool = True):
    """FLOPs of one step: 2 per multiply-add of every linear map.

    Prunable matrices are scaled by ``density`` (or by the exact surviving
    weight count ``kept``, which yields an integer). Attention score products,
    embeddings and elementwise ops are not counted. A training step counts as
    three forward passes.
    """
    total_prunable, dense_tok, dense_ex = _macs_per_row(spec)
    if kept is None:
        if not 0.0 < density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {density}")
        live = Fraction(density).limit_denominator(10**12) * total_prunable
    else:
        live = kept
    tokens = spec.seq_len + 1 if spec.kind == "tiny-transformer" else 1
    fwd = 2 * batch_size * (tokens * (live + dense_tok) + dense_ex)
    total = 3 * fwd if train else fwd
    if isinstance(total, Fraction):
        return int(total) if total.denominator == 1 else float(total)
    return total


@dataclass
class BudgetLedger:
    spec: ModelSpec
    batch_size: int
    budget: int | None = None
    steps: dict[str, int] = field(default_factory=dict)
    flops: dict[str, int] = field(default_factory=dict)
    eval_passes: int = 0
    eval_examples: int = 0
    trace: list[dict] = field(default_factory=list)
    record_trace: bool = True

    @property
    def total_steps(self) -> int:
        return sum(self.steps.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    def remaining(self) -> int | None:
        return None if self.budget is None else self.budget - self.total_steps

    def require(self, n_steps: int, what: str) -> None:
        rem = self.remaining()
        if rem is not None and n_steps > rem:
            raise BudgetExceeded(f"{what} needs {n_steps} steps but only {rem} of the {self.budget}-step budget remain")

    def charge_step(self, phase: str, kept: int, lr: float, loss: float, sparsity: float) -> None:
        if phase not in TRAIN_PHASES:
            raise ValueError(f"unknown training phase {phase!r}")
        self.steps[phase] = self.steps.get(phase, 0) + 1
        self.flops[phase] = self.flops.get(phase, 0) + flops_per_step(self.spec, self.batch_size, kept=kept)
        if self.record_trace:
            self.trace.append({"step": self.total_steps, "phase": phase, "lr": lr, "kept": kept,
                               "sparsity": sparsity, "loss": loss})

    def charge_eval(self, n_examples: int, kept: int) -> None:
        self.eval_passes += 1
        self.eval_examples += n_examples
        self.flops["eval"] = self.flops.get("eval", 0) + flops_per_step(self.spec, n_examples, kept=kept, train=False)
        if self.record_trace:
            self.trace.append({"step": self.total_steps, "phase": "eval", "n": n_examples, "kept": kept})

    def summary(self) -> dict:
        return {
            "steps": dict(sorted(self.steps.items())),
            "flops": dict(sorted(self.flops.items())),
            "total_steps": self.total_steps,
            "total_flops": self.total_flops,
            "eval_passes": self.eval_passes,
            "budget": self.budget,
        }


def flops_from_trace(spec: ModelSpec, batch_size: int, trace: list[dict]) -> dict[str, int]:
    """Recompute per-phase FLOPs from step-trace records."""
    out: dict[str, int] = {}
    for rec in trace:
        if rec["phase"] == "eval":
            f = flops_per_step(spec, rec["n"], kept=rec["kept"], train=False)
        else:
            f = flops_per_step(spec, batch_size, kept=rec["kept"])
        out[rec["phase"]] = out.get(rec["phase"], 0) + f
    return out
