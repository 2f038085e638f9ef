"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is taped dynamically during each forward pass and consumed by a
single ``backward`` call; there is no graph reuse.  Shapes are kept simple on
purpose: scalars, vectors, and ``[batch x feature]`` matrices.  All storage
is float64.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf as _erf

# Selected-action log-probabilities are floored here to keep surrogate
# ratios and KL terms finite even for near-deterministic policies.
LOG_PROB_FLOOR = -30.0

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class AutodiffError(RuntimeError):
    """Raised on contract violations in the tape machinery."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable taping inside the block; results become constant leaves."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable] = None
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph-free value access ----------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method sugar ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def gelu(self):
        return gelu(self)

    def square(self):
        return mul(self, self)

    def clamp(self, lo=None, hi=None):
        return clamp(self, lo, hi)

    def transpose(self):
        return transpose(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _raise_scalar(t: Tensor):
    raise AutodiffError(f"item() requires a size-1 tensor, got shape {t.shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes, then sum over axes that were size 1
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _make(-a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise AutodiffError(f"transpose expects a 2-D tensor, got shape {a.shape}")

    def bwd(g):
        return (g.T,)

    return _make(a.data.T, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bwd)


def swap_inner_axes(a: Tensor, outer: int, inner: int) -> Tensor:
    """Reorder rows of an ``[outer*inner x C]`` matrix into ``[outer*C x inner]``.

    Row ``o*inner + i``, column ``c`` of the input lands at row ``o*C + c``,
    column ``i`` of the output: a per-group 2-D transpose.  Used to run
    row-mixing layers over grids stacked along the batch axis.
    """
    rows, cols = a.data.shape
    if rows != outer * inner:
        raise AutodiffError(f"swap_inner_axes: {rows} rows != {outer} * {inner}")
    data = a.data.reshape(outer, inner, cols).transpose(0, 2, 1).reshape(outer * cols, inner)

    def bwd(g):
        gi = g.reshape(outer, cols, inner).transpose(0, 2, 1).reshape(outer * inner, cols)
        return (gi,)

    return _make(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), bwd)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select (possibly repeated) rows of a 2-D tensor."""
    idx = np.asarray(index, dtype=np.intp)
    data = a.data[idx]
    rows, cols = a.data.shape

    def bwd(g):
        gi = np.zeros((rows, cols))
        np.add.at(gi, idx, g)
        return (gi,)

    return _make(data, (a,), bwd)


def take_along_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one entry per row of a ``[B x K]`` tensor; returns shape ``[B]``."""
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]
    shape = a.data.shape

    def bwd(g):
        gi = np.zeros(shape)
        gi[rows, idx] = g
        return (gi,)

    return _make(data, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(data, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return _make(np.log(ad), (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / data,)

    return _make(data, (a,), bwd)


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask = mask * (a.data >= lo)
    if hi is not None:
        mask = mask * (a.data <= hi)

    def bwd(g):
        return (g * mask,)

    return _make(data, (a,), bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; on ties the gradient is routed to the first operand."""
    pick_a = a.data <= b.data
    data = np.where(pick_a, a.data, b.data)

    def bwd(g):
        return g * pick_a, g * ~pick_a

    return _make(data, (a, b), bwd)


# -- activations ----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = a.data * mask

    def bwd(g):
        return (g * mask,)

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    ad = a.data
    cdf = 0.5 * (1.0 + _erf(ad * _INV_SQRT2))
    data = ad * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * ad * ad)
        return (g * (cdf + ad * pdf),)

    return _make(data, (a,), bwd)


ACTIVATIONS = {"relu": relu, "gelu": gelu, "tanh": tanh, "sigmoid": sigmoid}


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max subtraction for stability."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    p = np.exp(data)

    def bwd(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(data, (a,), bwd)


# -- backward engine --------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order: list = []
    visited: set = set()
    stack: list = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # parents appear before their consumers


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The loss must be a size-1 tensor.  The tape is released afterwards, so a
    second backward through the same graph raises.  Gradients accumulate
    across calls until explicitly zeroed.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise AutodiffError("backward called twice on the same tape")
    order = _topo_order(loss)
    seed = np.ones_like(loss.data)
    loss.grad = seed if loss.grad is None else loss.grad + seed
    for node in reversed(order):
        fn = node._backward_fn
        if fn is None:
            continue
        grads = fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            parent.grad = g if parent.grad is None else parent.grad + g
    # release the tape; intermediate grads are dropped with it
    for node in order:
        if node._backward_fn is not None:
            node._backward_fn = None
            node._parents = ()
            if node is not loss:
                node.grad = None
    loss._consumed = True
