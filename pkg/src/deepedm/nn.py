"""Neural building blocks on top of :mod:`deepedm.tensor`.

Linear layers, MLPs with inverted dropout, softmax attention, AdamW and a
small deterministic checkpoint format.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor, ShapeError

CHECKPOINT_MAGIC = b"DEDMCKPT"
CHECKPOINT_VERSION = 1


class Module:
    """Minimal parameter container with train/eval switching."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters in state: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{k}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()

    def _children(self) -> Iterator["Module"]:
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


class Linear(Module):
    """``y = x W^T + b`` over the last axis, shared across all leading axes."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(rng.uniform(-bound, bound, size=(out_features, in_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last dim {self.in_features}, got input shape {x.shape}")
        return T.matmul(x, T.transpose(self.weight)) + self.bias


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * keep


ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


class Mlp(Module):
    """Stack of linear layers; every layer but the last is followed by activation and dropout."""

    def __init__(self, sizes: list[int], activation: str = "gelu", dropout_p: float = 0.1,
                 rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if not 0.0 <= dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {dropout_p}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self.dropout_p = dropout_p

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].out_features

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        return mlp_forward(self, x, "train" if self.training else "eval", rng)


def mlp_forward(mlp: Mlp, x, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != mlp.in_features:
        raise ShapeError(f"MLP expects last dim {mlp.in_features}, got input shape {x.shape}")
    act = ACTIVATIONS[mlp.activation]
    training = mode == "train"
    for layer in mlp.layers[:-1]:
        x = dropout(act(layer(x)), mlp.dropout_p, rng, training)
    return mlp.layers[-1](x)


def attention(queries, keys, values, temperature: float = 1.0) -> Tensor:
    """Softmax attention ``softmax(q k^T / temperature) v`` over the last two axes."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    q, k, v = T.as_tensor(queries), T.as_tensor(keys), T.as_tensor(values)
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"keys {k.shape} and values {v.shape} differ in row count")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"queries {q.shape} and keys {k.shape} differ in feature size")
    logits = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / temperature)
    return T.matmul(T.softmax(logits, axis=-1), v)


@dataclass
class AdamW:
    """AdamW with bias-corrected moments and decoupled weight decay."""

    params: list[Tensor]
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    names: list[str] | None = None
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                name = self.names[i] if self.names else f"#{i}"
                raise FloatingPointError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(state: AdamW, grads: list[np.ndarray]) -> list[Tensor]:
    state.step(grads)
    return state.params


# -- checkpoint format -----------------------------------------------------
# Layout (little endian):
#   8 bytes magic "DEDMCKPT" | uint32 version | uint64 header length
#   header: UTF-8 JSON {"meta": {...}, "tensors": [{"name", "shape", "offset"}...]}
#   payload: concatenated float64 arrays in row-major order, in header order.

def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    base = 20 + hlen
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + 8 * n], dtype="<f8").reshape(e["shape"])
        state[e["name"]] = arr.astype(np.float64)
    return state, header["meta"]
