"""Binary checkpoint container.

All integers and floats are little-endian::

    b"ISCK"            magic
    u16                format version (1)
    u32 + bytes        JSON header: model spec, optimizer hyperparameters, user meta
    u64                global step counter
    u64 u64 u64        optimizer step count, stream epoch, stream cursor
    u64 + bytes        stream seed (u64) and name (u16 length + utf-8)
    u64 + i64[n]       stream index set
    u32                number of parameters, then per parameter:
                         u16 name_len | name | u8 ndim | u32 dims | f64 data
                         u8 has_moments | f64 exp_avg | f64 exp_avg_sq

The JSON header only carries values that round-trip exactly (ints, strings
and floats written with ``repr``).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .models import ModelSpec, build_model
from .optim import AdamW
from .training import Checkpoint, DataStream

MAGIC = b"ISCK"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _write_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _write_array(buf, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    opt = ckpt.optimizer
    header = {
        "spec": ckpt.model.spec.to_dict(),
        "optimizer": {
            "base_lr": opt.base_lr, "weight_decay": opt.weight_decay, "betas": list(opt.betas), "eps": opt.eps,
            "total_steps": opt.total_steps, "constant_lr": opt.constant_lr,
        },
        "meta": ckpt.meta,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    st = ckpt.stream
    buf.write(struct.pack("<QQQQ", ckpt.step, opt.step_count, st.epoch, st.cursor))
    buf.write(struct.pack("<QI", st.seed, st.batch_size))
    _write_str(buf, st.name)
    buf.write(struct.pack("<Q", st.indices.size))
    buf.write(st.indices.astype("<i8").tobytes())
    buf.write(struct.pack("<I", len(ckpt.model.params)))
    for name, p in ckpt.model.params.items():
        _write_str(buf, name)
        buf.write(struct.pack("<B", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        _write_array(buf, p.data)
        has = name in opt.exp_avg
        buf.write(struct.pack("<B", int(has)))
        if has:
            _write_array(buf, opt.exp_avg[name])
            _write_array(buf, opt.exp_avg_sq[name])
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.view = memoryview(data)
        self.pos = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from(fmt, self.view, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def string(self) -> str:
        (n,) = self.unpack("<H")
        s = bytes(self.view[self.pos:self.pos + n]).decode("utf-8")
        self.pos += n
        return s

    def array(self, dtype: str, count: int) -> np.ndarray:
        arr = np.frombuffer(self.view, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += arr.itemsize * count
        return arr


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if bytes(r.view[:4]) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    r.pos = 4
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(bytes(r.view[r.pos:r.pos + hlen]).decode("utf-8"))
    r.pos += hlen
    step, opt_steps, epoch, cursor = r.unpack("<QQQQ")
    seed, batch_size = r.unpack("<QI")
    name = r.string()
    (n_idx,) = r.unpack("<Q")
    indices = r.array("<i8", n_idx).astype(np.int64)
    (n_params,) = r.unpack("<I")
    state, m, v = {}, {}, {}
    for _ in range(n_params):
        pname = r.string()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        state[pname] = r.array("<f8", count).reshape(shape).astype(np.float64)
        (has,) = r.unpack("<B")
        if has:
            m[pname] = r.array("<f8", count).reshape(shape).astype(np.float64)
            v[pname] = r.array("<f8", count).reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    spec = ModelSpec(**header["spec"])
    model = build_model(spec, state)
    o = header["optimizer"]
    opt = AdamW(o["base_lr"], o["weight_decay"], tuple(o["betas"]), o["eps"], o["total_steps"], o["constant_lr"],
                opt_steps, m, v)
    stream = DataStream(indices, batch_size, seed, name, epoch, cursor)
    return Checkpoint(model, opt, stream, step, header["meta"])


def save(ckpt: Checkpoint, path: str | Path) -> str:
    """Write ``ckpt`` to ``path``; returns the sha256 of the bytes written."""
    data = to_bytes(ckpt)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def checkpoint_hash(ckpt: Checkpoint) -> str:
    return hashlib.sha256(to_bytes(ckpt)).hexdigest()
