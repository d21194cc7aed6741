"""Flat JSON experiment configs.

Every key is listed in ``DEFAULTS``; anything else is rejected so a typo in
a sweep file cannot silently fall back to a default. ``model`` and
``dataset`` have no default and must be given.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..data import Dataset, gen_gaussian_clusters, gen_sequence_task, load_csv
from ..engine.models import ModelSpec

METHODS = ("isp", "imp", "imp-rewind", "oneshot", "random", "progressive", "snip")
SWEEP_AXES = ("denoiser_count", "look_ahead")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    dataset: str
    # model shape
    depth: int = 1
    width: int = 16
    heads: int = 1
    ffn_mult: int = 2
    # data
    classes: int = 8
    vocab: int = 16
    seq_len: int = 12
    n: int = 2000
    dim: int = 16
    separation: float = 6.0
    data_path: str = ""
    # pretraining
    pretrained: str = ""
    pretrain_epochs: int = 20
    pretrain_lr: float = 3e-3
    # pruning (Table-1 shaped)
    lr: float = 1e-3
    epochs: float = 0.0
    total_budget: int = 0
    weight_decay: float = 0.1
    compression_rate: float = 0.15
    look_ahead: int = 50
    denoisers: int = 5
    target_sparsity: float = 0.5
    mask_budget_fraction: float = 0.5
    seed_fraction: float = 0.10
    adjust_by: str = "snapshot"
    batch_size: int = 32
    # baselines
    imp_rounds: int = 5
    imp_round_budget: int = 0
    imp_finetune_budget: int = 0
    rewind_step: int = 0
    progressive_prunes: int = 5
    # soup
    soup_candidates: int = 4
    soup_steps: int = 100
    soup_sparsities: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    soup_metric: str = "accuracy"
    # analysis
    compare_methods: tuple = ("oneshot", "imp")
    compare_sparsities: tuple = (0.1, 0.2, 0.3, 0.8)
    compare_round_budget: int = 0
    sweep_axis: str = "denoiser_count"
    sweep_values: tuple = (0, 2, 4, 6, 8, 16)
    # run control
    method: str = "isp"
    seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        if self.model not in ("tiny-transformer", "mlp"):
            raise ConfigError(f"model: expected 'tiny-transformer' or 'mlp', got {self.model!r}")
        if self.dataset not in ("sequence", "gaussian", "csv"):
            raise ConfigError(f"dataset: expected 'sequence', 'gaussian' or 'csv', got {self.dataset!r}")
        if self.dataset == "csv" and not self.data_path:
            raise ConfigError("data_path: required when dataset is 'csv'")
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis: expected one of {', '.join(SWEEP_AXES)}, got {self.sweep_axis!r}")
        if self.epochs <= 0 and self.total_budget <= 0:
            raise ConfigError("epochs: give a positive epochs or total_budget to fix the step budget T")
        if not 0.0 < self.target_sparsity < 1.0:
            raise ConfigError("target_sparsity: must lie in (0, 1)")
        if not 0.0 < self.mask_budget_fraction <= 1.0:
            raise ConfigError("mask_budget_fraction: must lie in (0, 1]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Identity of the experiment; the output directory does not take part."""
        d = self.to_dict()
        d.pop("out_dir")
        raw = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(raw).hexdigest()

    def total_steps(self, dataset: Dataset) -> int:
        """Training budget T: explicit, or ``epochs`` passes over the train split."""
        if self.total_budget > 0:
            return self.total_budget
        return max(1, math.ceil(self.epochs * dataset.train.size / self.batch_size))

    def model_spec(self, dataset: Dataset) -> ModelSpec:
        classes = dataset.n_classes
        if self.model == "mlp":
            return ModelSpec("mlp", self.depth, self.width, classes, input_dim=dataset.inputs.shape[1])
        return ModelSpec("tiny-transformer", self.depth, self.width, classes, vocab=self.vocab,
                         seq_len=self.seq_len, heads=self.heads, ffn_mult=self.ffn_mult)

    def build_dataset(self) -> Dataset:
        if self.dataset == "sequence":
            return gen_sequence_task(self.vocab, self.seq_len, self.classes, self.n, self.seed)
        if self.dataset == "gaussian":
            return gen_gaussian_clusters(self.classes, self.dim, self.separation, self.n, self.seed)
        return load_csv(self.data_path, self.seed)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value, default):
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list")
        return tuple(value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def config_from_dict(raw: dict, **overrides) -> ExperimentConfig:
    merged = dict(raw)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for required in ("model", "dataset"):
        if required not in merged:
            raise ConfigError(f"{required}: missing required field")
    values = {}
    for name, value in merged.items():
        default = _FIELDS[name].default
        values[name] = value if name in ("model", "dataset") else _coerce(name, value, default)
    try:
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a single JSON object")
    return config_from_dict(raw, **overrides)
