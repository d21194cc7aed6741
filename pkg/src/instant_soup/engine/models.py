"""Model specs, parameter registries and the two forward passes (MLP, tiny transformer).

Linear weights are stored ``(in_features, out_features)`` so a layer is
``x @ W + b``. Only attention projections and feed-forward/hidden weight
matrices are prunable; embeddings, biases, layer norms and the
classification head are not.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from ..masks import Mask
from ..rng import derive_rng
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    depth: int
    width: int
    classes: int
    input_dim: int = 0
    vocab: int = 0
    seq_len: int = 0
    heads: int = 1
    ffn_mult: int = 2

    def __post_init__(self):
        if self.kind not in ("mlp", "tiny-transformer"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.depth < 0 or self.classes < 1:
            raise ValueError("depth must be >= 0 and classes >= 1")
        if self.kind == "mlp":
            if self.input_dim < 1:
                raise ValueError("mlp needs input_dim >= 1")
        else:
            if self.vocab < 1 or self.seq_len < 1:
                raise ValueError("tiny-transformer needs vocab >= 1 and seq_len >= 1")
            if self.heads < 1 or self.width % self.heads:
                raise ValueError(f"width {self.width} is not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Parameter:
    name: str
    tensor: Tensor
    prunable: bool

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data


def parameter_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], bool]]:
    """Ordered (name, shape, prunable) for every parameter of ``spec``."""
    out = []
    w = spec.width
    if spec.kind == "mlp":
        fan_in = spec.input_dim
        for i in range(spec.depth):
            out.append((f"mlp.{i}.weight", (fan_in, w), True))
            out.append((f"mlp.{i}.bias", (w,), False))
            fan_in = w
        out.append(("head.weight", (fan_in, spec.classes), False))
        out.append(("head.bias", (spec.classes,), False))
        return out

    ffn = spec.ffn_mult * w
    out.append(("embed.token", (spec.vocab, w), False))
    out.append(("embed.cls", (1, w), False))
    out.append(("embed.position", (spec.seq_len + 1, w), False))
    for i in range(spec.depth):
        p = f"block.{i}"
        out += [
            (f"{p}.ln1.gamma", (w,), False),
            (f"{p}.ln1.beta", (w,), False),
            (f"{p}.attn.query.weight", (w, w), True),
            (f"{p}.attn.query.bias", (w,), False),
            (f"{p}.attn.key.weight", (w, w), True),
            (f"{p}.attn.key.bias", (w,), False),
            (f"{p}.attn.value.weight", (w, w), True),
            (f"{p}.attn.value.bias", (w,), False),
            (f"{p}.attn.dense.weight", (w, w), True),
            (f"{p}.attn.dense.bias", (w,), False),
            (f"{p}.ln2.gamma", (w,), False),
            (f"{p}.ln2.beta", (w,), False),
            (f"{p}.ffn.in.weight", (w, ffn), True),
            (f"{p}.ffn.in.bias", (ffn,), False),
            (f"{p}.ffn.out.weight", (ffn, w), True),
            (f"{p}.ffn.out.bias", (w,), False),
        ]
    out.append(("final_ln.gamma", (w,), False))
    out.append(("final_ln.beta", (w,), False))
    out.append(("head.weight", (w, spec.classes), False))
    out.append(("head.bias", (spec.classes,), False))
    return out


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, Parameter] = field(default_factory=dict)

    @property
    def registry(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return tuple((n, p.data.shape) for n, p in self.params.items() if p.prunable)

    def prunable(self) -> list[Parameter]:
        return [p for p in self.params.values() if p.prunable]

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self.params.items():
            if state[n].shape != p.data.shape:
                raise ValueError(f"parameter {n!r}: expected shape {p.data.shape}, got {state[n].shape}")
            p.tensor.data = np.array(state[n], dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.grad = None

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def apply_mask(self, mask: Mask | None) -> None:
        """Zero every pruned weight in place."""
        if mask is None:
            return
        check_mask(self, mask)
        for name, _ in mask.registry:
            self.params[name].tensor.data *= mask.bits[name]

    def ones_mask(self) -> Mask:
        return Mask.ones(self.registry)


def build_model(spec: ModelSpec, state: dict[str, np.ndarray]) -> Model:
    model = Model(spec)
    for name, shape, prunable in parameter_shapes(spec):
        if name not in state:
            raise ValueError(f"state is missing parameter {name!r}")
        arr = np.asarray(state[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"parameter {name!r}: expected shape {shape}, got {arr.shape}")
        model.params[name] = Parameter(name, Tensor(arr.copy(), requires_grad=True), prunable)
    return model


def init_model(spec: ModelSpec, seed: int) -> Model:
    rng = derive_rng(seed, "init")
    state = {}
    for name, shape, _ in parameter_shapes(spec):
        if name.endswith(".bias") or name.endswith(".beta"):
            state[name] = np.zeros(shape)
        elif name.endswith(".gamma"):
            state[name] = np.ones(shape)
        elif name.startswith("embed."):
            state[name] = rng.normal(0.0, 0.5, size=shape)
        else:
            state[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    return build_model(spec, state)


def check_mask(model: Model, mask: Mask) -> None:
    reg = model.registry
    if mask.registry != reg:
        names = {n: s for n, s in mask.registry}
        for n, s in reg:
            if names.get(n) != s:
                raise ValueError(f"mask is not aligned with prunable parameter {n!r} (model shape {s}, mask {names.get(n)})")
        raise ValueError("mask registry does not match the model's prunable registry")


def _check_params(model: Model) -> None:
    for name, shape, _ in parameter_shapes(model.spec):
        p = model.params.get(name)
        if p is None:
            raise ValueError(f"model is missing parameter {name!r}")
        if p.data.shape != shape:
            raise ValueError(f"parameter {name!r} has shape {p.data.shape}, spec requires {shape}")


def _weight(model: Model, name: str, mask: Mask | None) -> Tensor:
    t = model.params[name].tensor
    if mask is not None and name in mask.bits:
        return T.mul(t, mask.bits[name].astype(np.float64))
    return t


def forward(model: Model, batch: np.ndarray, mask: Mask | None = None) -> Tensor:
    """Logits of shape (batch, classes).

    With ``mask`` given, pruned weights are multiplied by zero inside the
    graph so they contribute nothing to any activation.
    """
    _check_params(model)
    if mask is not None:
        check_mask(model, mask)
    spec = model.spec
    batch = np.asarray(batch)
    if spec.kind == "mlp":
        if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
            raise ValueError(f"mlp input must be (batch, {spec.input_dim}); got {batch.shape} (first layer parameter "
                             f"{'mlp.0.weight' if spec.depth else 'head.weight'!r})")
        return _mlp_forward(model, batch, mask)
    if batch.ndim != 2 or batch.shape[1] != spec.seq_len:
        raise ValueError(f"transformer input must be (batch, {spec.seq_len}) token ids for 'embed.position'; got {batch.shape}")
    if not np.issubdtype(batch.dtype, np.integer):
        raise ValueError("transformer input must be integer token ids for 'embed.token'")
    if batch.size and (batch.min() < 0 or batch.max() >= spec.vocab):
        raise ValueError(f"token ids must lie in [0, {spec.vocab}) for 'embed.token'")
    return _transformer_forward(model, batch, mask)


def _mlp_forward(model: Model, x: np.ndarray, mask: Mask | None) -> Tensor:
    p = model.params
    h = Tensor(x)
    for i in range(model.spec.depth):
        h = T.relu(T.linear(h, _weight(model, f"mlp.{i}.weight", mask), p[f"mlp.{i}.bias"].tensor))
    return T.linear(h, p["head.weight"].tensor, p["head.bias"].tensor)


def attention(h: Tensor, model: Model, prefix: str, mask: Mask | None) -> Tensor:
    spec = model.spec
    p = model.params
    B, L, W = h.shape
    H, D = spec.heads, spec.head_dim

    def heads_of(name):
        y = T.linear(h, _weight(model, f"{prefix}.{name}.weight", mask), p[f"{prefix}.{name}.bias"].tensor)
        return T.transpose(T.reshape(y, (B, L, H, D)), (0, 2, 1, 3))

    q, k, v = heads_of("query"), heads_of("key"), heads_of("value")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(D))
    ctx = T.matmul(T.softmax(scores, axis=-1), v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, W))
    return T.linear(ctx, _weight(model, f"{prefix}.dense.weight", mask), p[f"{prefix}.dense.bias"].tensor)


def feed_forward(h: Tensor, model: Model, prefix: str, mask: Mask | None) -> Tensor:
    p = model.params
    u = T.gelu(T.linear(h, _weight(model, f"{prefix}.in.weight", mask), p[f"{prefix}.in.bias"].tensor))
    return T.linear(u, _weight(model, f"{prefix}.out.weight", mask), p[f"{prefix}.out.bias"].tensor)


def _transformer_forward(model: Model, ids: np.ndarray, mask: Mask | None) -> Tensor:
    p = model.params
    B = ids.shape[0]
    tok = T.embedding(p["embed.token"].tensor, ids)
    cls = T.embedding(p["embed.cls"].tensor, np.zeros((B, 1), dtype=np.int64))
    h = _concat_seq(cls, tok)
    h = T.add(h, p["embed.position"].tensor)
    for i in range(model.spec.depth):
        pre = f"block.{i}"
        a = T.layer_norm(h, p[f"{pre}.ln1.gamma"].tensor, p[f"{pre}.ln1.beta"].tensor)
        h = T.add(h, attention(a, model, f"{pre}.attn", mask))
        f = T.layer_norm(h, p[f"{pre}.ln2.gamma"].tensor, p[f"{pre}.ln2.beta"].tensor)
        h = T.add(h, feed_forward(f, model, f"{pre}.ffn", mask))
    h = T.layer_norm(h, p["final_ln.gamma"].tensor, p["final_ln.beta"].tensor)
    # classify from the CLS position
    pooled = T.take_index(h, 0, axis=1)
    return T.linear(pooled, p["head.weight"].tensor, p["head.bias"].tensor)


def _concat_seq(a: Tensor, b: Tensor) -> Tensor:
    n = a.shape[1]

    def backward(g):
        a._accumulate(g[:, :n])
        b._accumulate(g[:, n:])

    return T._make(np.concatenate([a.data, b.data], axis=1), (a, b), "concat", backward)


def predict(model: Model, inputs: np.ndarray, mask: Mask | None = None, batch_size: int = 512) -> np.ndarray:
    preds = []
    for i in range(0, len(inputs), batch_size):
        preds.append(forward(model, inputs[i:i + batch_size], mask).data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model: Model, inputs: np.ndarray, labels: np.ndarray, mask: Mask | None = None) -> float:
    if len(labels) == 0:
        raise ValueError("accuracy over an empty set is undefined")
    return float(np.mean(predict(model, inputs, mask) == labels))
