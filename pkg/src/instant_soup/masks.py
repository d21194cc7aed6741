"""Binary keep-masks over a model's prunable parameters.

Bit 1 marks a weight that survives. Masks are tied to a *registry*: the
ordered list of prunable parameter names and shapes. Global operations use
the concatenation of the per-parameter bit arrays in registry order, which
also defines the canonical flat index used for tie-breaking.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"ISMK"
VERSION = 1

Registry = Sequence[tuple[str, tuple[int, ...]]]


class MaskError(ValueError):
    pass


def registry_fingerprint(registry: Registry) -> str:
    h = hashlib.sha256()
    for name, shape in registry:
        h.update(name.encode("utf-8"))
        h.update(b"\0")
        h.update(",".join(str(int(d)) for d in shape).encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Mask:
    registry: tuple[tuple[str, tuple[int, ...]], ...]
    bits: Mapping[str, np.ndarray]
    fingerprint: str

    def __post_init__(self):
        for name, shape in self.registry:
            arr = self.bits.get(name)
            if arr is None:
                raise MaskError(f"mask is missing bits for parameter {name!r}")
            if arr.shape != tuple(shape):
                raise MaskError(f"mask bits for {name!r} have shape {arr.shape}, registry says {tuple(shape)}")
            arr.setflags(write=False)
        extra = set(self.bits) - {n for n, _ in self.registry}
        if extra:
            raise MaskError(f"mask has bits for unregistered parameters: {sorted(extra)}")

    @classmethod
    def from_arrays(cls, registry: Registry, arrays: Mapping[str, np.ndarray]) -> "Mask":
        reg = tuple((n, tuple(int(d) for d in s)) for n, s in registry)
        bits = {n: np.array(arrays[n], dtype=bool, copy=True) for n, _ in reg}
        return cls(reg, bits, registry_fingerprint(reg))

    @classmethod
    def ones(cls, registry: Registry) -> "Mask":
        return cls.from_arrays(registry, {n: np.ones(s, dtype=bool) for n, s in registry})

    @classmethod
    def zeros(cls, registry: Registry) -> "Mask":
        return cls.from_arrays(registry, {n: np.zeros(s, dtype=bool) for n, s in registry})

    @classmethod
    def from_flat(cls, registry: Registry, flat: np.ndarray) -> "Mask":
        flat = np.asarray(flat, dtype=bool)
        sizes = [int(np.prod(s)) for _, s in registry]
        if flat.size != sum(sizes):
            raise MaskError(f"flat mask has {flat.size} bits, registry holds {sum(sizes)}")
        arrays, pos = {}, 0
        for (name, shape), n in zip(registry, sizes):
            arrays[name] = flat[pos:pos + n].reshape(shape)
            pos += n
        return cls.from_arrays(registry, arrays)

    def flat(self) -> np.ndarray:
        if not self.registry:
            return np.zeros(0, dtype=bool)
        return np.concatenate([self.bits[n].ravel() for n, _ in self.registry])

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.registry)

    @property
    def kept(self) -> int:
        return sum(int(self.bits[n].sum()) for n, _ in self.registry)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.fingerprint == other.fingerprint and all(
            np.array_equal(self.bits[n], other.bits[n]) for n, _ in self.registry
        )

    def __hash__(self):
        return hash((self.fingerprint, self.flat().tobytes()))

    def __or__(self, other: "Mask") -> "Mask":
        return union(self, other)

    def __and__(self, other: "Mask") -> "Mask":
        return intersect(self, other)


@dataclass(frozen=True)
class SparsityReport:
    total: int
    kept: int
    per_parameter: dict[str, int]

    @property
    def sparsity(self) -> float:
        return 1.0 - self.kept / self.total if self.total else 0.0

    @property
    def density(self) -> float:
        return 1.0 - self.sparsity


def density(mask: Mask) -> SparsityReport:
    per = {n: int(mask.bits[n].sum()) for n, _ in mask.registry}
    return SparsityReport(total=mask.size, kept=sum(per.values()), per_parameter=per)


def _check_compatible(a: Mask, b: Mask) -> None:
    if a.fingerprint != b.fingerprint:
        raise MaskError(f"registry fingerprints differ ({a.fingerprint[:12]} vs {b.fingerprint[:12]})")


def union(a: Mask, b: Mask) -> Mask:
    _check_compatible(a, b)
    return Mask.from_arrays(a.registry, {n: a.bits[n] | b.bits[n] for n, _ in a.registry})


def intersect(a: Mask, b: Mask) -> Mask:
    _check_compatible(a, b)
    return Mask.from_arrays(a.registry, {n: a.bits[n] & b.bits[n] for n, _ in a.registry})


def is_subset(a: Mask, b: Mask) -> bool:
    """True when every weight kept by ``a`` is also kept by ``b``."""
    _check_compatible(a, b)
    return all(not np.any(a.bits[n] & ~b.bits[n]) for n, _ in a.registry)


def cosine_similarity(a: Mask, b: Mask, *, polarity: str = "keep") -> float:
    """Cosine of the flattened bit vectors.

    ``polarity="prune"`` compares the complement (pruned-bit) vectors instead.
    """
    _check_compatible(a, b)
    if polarity not in ("keep", "prune"):
        raise ValueError(f"polarity must be 'keep' or 'prune', got {polarity!r}")
    fa, fb = a.flat(), b.flat()
    if polarity == "prune":
        fa, fb = ~fa, ~fb
    na, nb = int(fa.sum()), int(fb.sum())
    if na == 0 or nb == 0:
        raise MaskError("cosine similarity is undefined for an all-zero bit vector")
    dot = int(np.count_nonzero(fa & fb))
    # sqrt of the exact integer product keeps identical masks at exactly 1.0
    return dot / float(np.sqrt(float(na * nb)))


# serialization -------------------------------------------------------------
#
# little-endian layout:
#   b"ISMK" | u16 version | 32-byte sha256 fingerprint | u32 n_params
#   per parameter (registry order):
#     u16 name_len | utf-8 name | u8 ndim | u32 dims[ndim]
#     u8 first_bit | u32 n_runs | u32 run_lengths[n_runs]


def _runs(flat: np.ndarray) -> tuple[int, np.ndarray]:
    if flat.size == 0:
        return 0, np.zeros(0, dtype=np.uint32)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    return int(flat[0]), np.diff(edges).astype("<u4")


def serialize(mask: Mask) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(bytes.fromhex(mask.fingerprint))
    buf.write(struct.pack("<I", len(mask.registry)))
    for name, shape in mask.registry:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", len(shape)))
        buf.write(struct.pack(f"<{len(shape)}I", *shape))
        first, runs = _runs(mask.bits[name].ravel())
        buf.write(struct.pack("<BI", first, runs.size))
        buf.write(runs.tobytes())
    return buf.getvalue()


def deserialize(data: bytes, registry: Registry | None = None) -> Mask:
    """Decode a mask; if ``registry`` is given its fingerprint must match."""
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise MaskError("not a mask file (bad magic)")
    (version,) = struct.unpack_from("<H", view, 4)
    if version != VERSION:
        raise MaskError(f"unsupported mask format version {version}")
    fingerprint = bytes(view[6:38]).hex()
    if registry is not None:
        expected = registry_fingerprint(registry)
        if expected != fingerprint:
            raise MaskError(f"mask registry fingerprint {fingerprint[:12]} does not match model registry {expected[:12]}")
    (n_params,) = struct.unpack_from("<I", view, 38)
    pos = 42
    reg, arrays = [], {}
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", view, pos)
        pos += 2
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", view, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", view, pos)
        pos += 4 * ndim
        first, n_runs = struct.unpack_from("<BI", view, pos)
        pos += 5
        runs = np.frombuffer(view, dtype="<u4", count=n_runs, offset=pos)
        pos += 4 * n_runs
        values = (np.arange(n_runs) + first) % 2
        flat = np.repeat(values.astype(bool), runs.astype(np.int64))
        reg.append((name, tuple(shape)))
        arrays[name] = flat.reshape(shape)
    mask = Mask.from_arrays(reg, arrays)
    if mask.fingerprint != fingerprint:
        raise MaskError("mask payload does not match its stored fingerprint")
    return mask
