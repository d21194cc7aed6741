"""Synthetic desk-scale datasets, subsampling and dense pretraining."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine.models import ModelSpec, accuracy, init_model
from .engine.training import Checkpoint, fresh_checkpoint, train_steps
from .ledger import BudgetLedger
from .rng import derive_rng

SPLIT_FRACTIONS = (0.7, 0.15, 0.15)


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return int(self.meta.get("classes", int(self.labels.max()) + 1))

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self, name)
        return self.inputs[idx], self.labels[idx]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.inputs, self.labels, self.train, self.val, self.test):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def split_of(seed: int, index: int) -> str:
    """Which split example ``index`` belongs to; depends on nothing else."""
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    u = int.from_bytes(digest, "little") / 2.0**64
    if u < SPLIT_FRACTIONS[0]:
        return "train"
    if u < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]:
        return "val"
    return "test"


def _splits(seed: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    names = np.array([split_of(seed, i) for i in range(n)])
    return tuple(np.flatnonzero(names == s) for s in ("train", "val", "test"))


def gen_gaussian_clusters(classes: int, dim: int, separation: float, n: int, seed: int,
                          sigma: float = 1.0) -> Dataset:
    """``n`` points per class from isotropic Gaussians.

    Class means sit on scaled, randomly rotated basis vectors so every pair
    of means is ``separation * sigma`` apart.
    """
    if dim < classes:
        raise ValueError(f"need dim >= classes for equidistant means (dim={dim}, classes={classes})")
    rng = derive_rng(seed, "gaussian-clusters")
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    means = (separation * sigma / math.sqrt(2.0)) * q[:, :classes].T
    labels = np.repeat(np.arange(classes), n)
    order = rng.permutation(labels.size)
    labels = labels[order]
    inputs = means[labels] + sigma * rng.normal(size=(labels.size, dim))
    train, val, test = _splits(seed, labels.size)
    meta = {"kind": "gaussian", "classes": classes, "dim": dim, "separation": separation, "n": n}
    return Dataset(inputs, labels.astype(np.int64), train, val, test, seed, meta)


def gen_sequence_task(vocab: int, seq_len: int, classes: int, n: int, seed: int) -> Dataset:
    """Token sequences with exactly one marker token; the label is the marker id.

    Tokens ``0..classes-1`` are markers, the rest are filler. Labels are
    balanced (``n`` is the total count, rounded down to a multiple of
    ``classes``).
    """
    if vocab <= classes and seq_len > 1:
        raise ValueError("vocab must exceed classes to leave room for filler tokens")
    rng = derive_rng(seed, "sequence-task")
    n = (n // classes) * classes
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    inputs = rng.integers(classes, max(vocab, classes + 1), size=(n, seq_len))
    pos = rng.integers(0, seq_len, size=n)
    inputs[np.arange(n), pos] = labels
    train, val, test = _splits(seed, n)
    meta = {"kind": "sequence", "classes": classes, "vocab": vocab, "seq_len": seq_len, "n": n}
    return Dataset(inputs.astype(np.int64), labels, train, val, test, seed, meta)


def subsample(indices: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """``floor(fraction * len(indices))`` distinct indices in random order."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    indices = np.asarray(indices)
    k = int(math.floor(fraction * indices.size))
    return rng.permutation(indices)[:k]


def seed_steps(n_train: int, batch_size: int, fraction: float = 0.10) -> int:
    """Optimizer steps needed to see ``fraction`` of the training split once."""
    return max(1, math.ceil(fraction * n_train / batch_size))


def evaluate(ckpt_or_model, dataset: Dataset, split: str = "val", mask=None) -> float:
    model = getattr(ckpt_or_model, "model", ckpt_or_model)
    x, y = dataset.split(split)
    return accuracy(model, x, y, mask)


def pretrain(spec: ModelSpec, dataset: Dataset, epochs: int, *, lr: float = 3e-3, weight_decay: float = 0.0,
             batch_size: int = 32, seed: int = 0, ledger: BudgetLedger | None = None) -> Checkpoint:
    """Dense training from a seeded initialisation.

    The returned checkpoint records ``val_accuracy`` in ``meta``.
    """
    model = init_model(spec, seed)
    steps_per_epoch = max(1, dataset.train.size // batch_size)
    total = epochs * steps_per_epoch
    ckpt = fresh_checkpoint(model, dataset.train, lr=lr, weight_decay=weight_decay, total_steps=max(total, 1),
                            batch_size=batch_size, seed=seed, stream_name="pretrain")
    train_steps(ckpt, dataset, total, ledger=ledger, phase="pretrain")
    ckpt.meta = {"kind": "pretrained", "epochs": epochs, "seed": seed,
                 "val_accuracy": evaluate(ckpt, dataset, "val")}
    return ckpt


# external data -------------------------------------------------------------


def load_csv(path: str | Path, seed: int = 0) -> Dataset:
    """Rows of ``label,feat1,feat2,...``; splits assigned by (seed, row index)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    arr = np.asarray(rows, dtype=np.float64)
    labels = arr[:, 0].astype(np.int64)
    train, val, test = _splits(seed, labels.size)
    meta = {"kind": "csv", "classes": int(labels.max()) + 1, "dim": arr.shape[1] - 1, "n": labels.size}
    return Dataset(arr[:, 1:].copy(), labels, train, val, test, seed, meta)


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    zero, dtype_code, ndim = struct.unpack_from(">HBB", data, 0)
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise ValueError(f"{path} is not an IDX file")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    return np.frombuffer(data, dtype=_IDX_TYPES[dtype_code], offset=4 + 4 * ndim).reshape(dims)


def load_idx(images: str | Path, labels: str | Path, seed: int = 0, scale: float = 1 / 255.0) -> Dataset:
    x = read_idx(images).astype(np.float64)
    x = x.reshape(x.shape[0], -1) * scale
    y = read_idx(labels).astype(np.int64)
    train, val, test = _splits(seed, y.size)
    meta = {"kind": "idx", "classes": int(y.max()) + 1, "dim": x.shape[1], "n": y.size}
    return Dataset(x, y, train, val, test, seed, meta)


# dataset cache ---------------------------------------------------------------
# b"ISDS" | u16 version | u32 json-meta length | json | then five arrays, each
# u8 kind (0 = f64, 1 = i64) | u8 ndim | u32 dims | little-endian payload


def save_dataset(ds: Dataset, path: str | Path) -> None:
    out = bytearray(b"ISDS")
    out += struct.pack("<H", 1)
    raw = json.dumps({"seed": ds.seed, "meta": ds.meta}, sort_keys=True).encode()
    out += struct.pack("<I", len(raw)) + raw
    for arr in (ds.inputs, ds.labels, ds.train, ds.val, ds.test):
        kind = 0 if arr.dtype.kind == "f" else 1
        out += struct.pack("<BB", kind, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f8" if kind == 0 else "<i8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != b"ISDS":
        raise ValueError(f"{path} is not a dataset cache file")
    (hlen,) = struct.unpack_from("<I", data, 6)
    header = json.loads(data[10:10 + hlen])
    pos = 10 + hlen
    arrays = []
    for _ in range(5):
        kind, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        dt = "<f8" if kind == 0 else "<i8"
        arrays.append(np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(dims).copy())
        pos += 8 * count
    return Dataset(*arrays, seed=header["seed"], meta=header["meta"])
