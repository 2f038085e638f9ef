"""Parameter registry, layers, Adam, and the checkpoint format.

Parameters live in a flat path-addressed store so optimizers can operate on
prefix groups and checkpoints can round-trip bit-exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from agentmixer import autodiff as ad
from agentmixer.autodiff import Tensor

CHECKPOINT_MAGIC = b"AMCK"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Raised when an update would write non-finite values into parameters."""


class ParamStore:
    """Flat map from slash-separated paths to trainable tensors."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.step = 0
        self._adam_m: Dict[str, np.ndarray] = {}
        self._adam_v: Dict[str, np.ndarray] = {}
        self._adam_t: Dict[str, int] = {}

    def create(self, path: str, data: np.ndarray) -> Tensor:
        if path in self.params:
            raise ValueError(f"duplicate parameter path: {path}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self.params[path]

    def __contains__(self, path: str) -> bool:
        return path in self.params

    def paths(self, prefix: str = "") -> List[str]:
        return [p for p in self.params if p.startswith(prefix)]

    def zero_grad(self, prefix: str = "") -> None:
        for p in self.paths(prefix):
            self.params[p].grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())


def global_grad_norm(store: ParamStore, paths: Sequence[str]) -> float:
    total = 0.0
    for p in paths:
        g = store.params[p].grad
        if g is not None:
            total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_grad_norm(store: ParamStore, max_norm: float, paths: Sequence[str]) -> float:
    """Scale gradients in place so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(store, paths)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in paths:
            g = store.params[p].grad
            if g is not None:
                store.params[p].grad = g * scale
    return norm


def adam_step(
    store: ParamStore,
    lr: float,
    eps: float = 1e-5,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    paths: Optional[Sequence[str]] = None,
) -> None:
    """One Adam update over the selected parameters.

    Missing gradients are treated as zero.  Non-finite gradients abort with
    the offending parameter path; parameters are untouched in that case.
    """
    selected = list(store.params) if paths is None else list(paths)
    for p in selected:
        g = store.params[p].grad
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter '{p}'")
    for p in selected:
        t = store.params[p]
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if weight_decay:
            g = g + weight_decay * t.data
        m = _moment_buffer(store._adam_m, p, t.data)
        v = _moment_buffer(store._adam_v, p, t.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store._adam_m[p] = m
        store._adam_v[p] = v
        k = store._adam_t.get(p, 0) + 1
        store._adam_t[p] = k
        m_hat = m / (1.0 - beta1**k)
        v_hat = v / (1.0 - beta2**k)
        t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    store.step += 1


def _moment_buffer(table: Dict[str, np.ndarray], path: str, like: np.ndarray) -> np.ndarray:
    if path not in table:
        table[path] = np.zeros_like(like)
    return table[path]


# -- initialization ---------------------------------------------------------


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# -- layers -------------------------------------------------------------------


def forward_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return ad.matmul(x, weight) + bias


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = centered.square().mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gain + shift


class Mlp:
    """Plain fully connected network; parameters registered under a prefix."""

    def __init__(
        self,
        store: ParamStore,
        prefix: str,
        dims: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        out_scale: float = 1.0,
    ):
        self.prefix = prefix
        self.activation = ad.ACTIVATIONS[activation]
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            w = init_linear(rng, din, dout)
            if i == len(dims) - 2 and out_scale != 1.0:
                w = w * out_scale
            self.weights.append(store.create(f"{prefix}/w{i}", w))
            self.biases.append(store.create(f"{prefix}/b{i}", np.zeros(dout)))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        n = len(self.weights)
        for i in range(n):
            h = forward_linear(h, self.weights[i], self.biases[i])
            if i < n - 1:
                h = self.activation(h)
        return h


# -- checkpoints --------------------------------------------------------------
#
# Binary layout (all integers little-endian):
#   magic "AMCK" | u32 format_version | u64 step | u64 rng_seed | u32 n_params
#   then per parameter, sorted by path:
#     u32 path_len | utf-8 path | u32 ndim | u64 dims... | float64 data (LE)


def save_checkpoint(path: str, store: ParamStore, rng_seed: int) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQQ", CHECKPOINT_VERSION, store.step, rng_seed))
        f.write(struct.pack("<I", len(store.params)))
        for name in sorted(store.params):
            data = store.params[name].data
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            for d in data.shape:
                f.write(struct.pack("<Q", d))
            f.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    format_version: int
    step: int
    rng_seed: int
    params: Dict[str, np.ndarray]


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        version, step, rng_seed = struct.unpack("<IQQ", f.read(20))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_params,) = struct.unpack("<I", f.read(4))
        params: Dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (path_len,) = struct.unpack("<I", f.read(4))
            name = f.read(path_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
            params[name] = np.array(data, dtype=np.float64)
    return Checkpoint(version, step, rng_seed, params)


def restore_into(store: ParamStore, ckpt: Checkpoint) -> None:
    """Copy checkpoint values into an already-built store; shapes must match."""
    missing = sorted(set(store.params) - set(ckpt.params))
    extra = sorted(set(ckpt.params) - set(store.params))
    if missing or extra:
        raise ValueError(
            f"checkpoint does not match model: missing={missing[:4]} extra={extra[:4]}"
        )
    for name, data in ckpt.params.items():
        t = store.params[name]
        if t.data.shape != data.shape:
            raise ValueError(
                f"shape mismatch for '{name}': model {t.data.shape}, checkpoint {data.shape}"
            )
        t.data = data.copy()
    store.step = ckpt.step
