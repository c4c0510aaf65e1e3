"""Reverse-mode autodiff over dense float64 numpy arrays.

A deliberately small tape: only the operations the attention mechanisms and
the toy transformer need. Graphs are built eagerly; ``backward`` walks the
tape once in reverse topological order and accumulates gradients into the
``grad`` attribute of every reachable tensor that requires them.

All values are stored as ``float64``; 32-bit inputs are promoted on entry.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _arr(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum gradient over axes that numpy broadcast during the forward op."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the autodiff graph. Treat ``value`` as immutable once built."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_bw")

    # keep numpy from consuming Tensor operands elementwise; reflected
    # operators below handle ndarray-Tensor arithmetic
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False):
        self.value = _arr(value)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[Array], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def backward(self, grad: Array | None = None) -> None:
        backward(self, grad)

    # arithmetic sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def make_node(value: Array, parents: Sequence[Tensor], bw) -> Tensor:
    """Build an op node. ``bw(g)`` returns one gradient per parent (or None)."""
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bw = bw
    return out


def backward(root: Tensor, grad: Array | None = None) -> None:
    """Accumulate d(root)/d(leaf) into .grad for every reachable tensor."""
    if not root.requires_grad:
        raise ValueError("backward() on a tensor that does not require grad")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    root.grad = np.ones_like(root.value) if grad is None else _arr(grad)
    for node in reversed(order):
        if node._bw is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._bw(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def zero_grads(tensors) -> None:
    vals = tensors.values() if isinstance(tensors, dict) else tensors
    for t in vals:
        t.grad = None


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape),
                   _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_node(
        a.value / b.value, (a, b),
        lambda g: (_unbroadcast(g / b.value, a.shape),
                   _unbroadcast(-g * a.value / (b.value * b.value), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    return make_node(a.value ** e, (a,),
                     lambda g: (g * e * a.value ** (e - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return make_node(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.value), (a,), lambda g: (g / a.value,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.value > 0
    return make_node(np.where(keep, a.value, 0.0), (a,),
                     lambda g: (g * keep,))


def stable_sigmoid(x: Array) -> Array:
    """1/(1+exp(-x)) without overflow; exp only sees non-positive arguments."""
    x = _arr(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = stable_sigmoid(a.value)
    return make_node(y, (a,), lambda g: (g * y * (1.0 - y),))


# -- reductions ------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# -- linear algebra / shape ------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return make_node(a.value @ b.value, (a, b),
                     lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.value.T, (a,), lambda g: (g.T,))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.value)
        out[idx] += g
        return (out,)

    return make_node(a.value[idx], (a,), bw)


def take_rows(a, ids) -> Tensor:
    """Row gather (embedding lookup); repeated ids accumulate in the grad."""
    a = as_tensor(a)
    ids = np.asarray(ids, dtype=np.intp)

    def bw(g):
        out = np.zeros_like(a.value)
        np.add.at(out, ids, g)
        return (out,)

    return make_node(a.value[ids], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.value for t in tensors], axis=axis),
                     tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_node(np.stack([t.value for t in tensors], axis=axis),
                     tensors, bw)


# -- sequence ops (last axis) ------------------------------------------------

def cumsum(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)

    return make_node(np.cumsum(a.value, axis=-1), (a,), bw)


def cumprod(a) -> Tensor:
    """Inclusive cumulative product along the last axis.

    The gradient uses the division form; entries that are exactly zero get
    zero gradient, which is the right answer everywhere this op is used
    (inputs are 1-p with p a sigmoid output, so a zero means the sigmoid
    saturated and its own backward already kills the chain).
    """
    a = as_tensor(a)
    y = np.cumprod(a.value, axis=-1)

    def bw(g):
        rev = np.flip(np.cumsum(np.flip(g * y, -1), axis=-1), -1)
        safe = np.where(a.value == 0.0, 1.0, a.value)
        return (np.where(a.value == 0.0, 0.0, rev / safe),)

    return make_node(y, (a,), bw)


def shift(a, n: int = 1, fill: float = 0.0) -> Tensor:
    """Shift along the last axis; n > 0 moves right, vacated slots get fill."""
    a = as_tensor(a)
    val = np.full_like(a.value, fill)
    if n == 0:
        val = a.value.copy()
    elif n > 0:
        val[..., n:] = a.value[..., :-n]
    else:
        val[..., :n] = a.value[..., -n:]

    def bw(g):
        out = np.zeros_like(a.value)
        if n == 0:
            out[...] = g
        elif n > 0:
            out[..., :-n] = g[..., n:]
        else:
            out[..., -n:] = g[..., :n]
        return (out,)

    return make_node(val, (a,), bw)


def flip(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.flip(a.value, -1), (a,),
                     lambda g: (np.flip(g, -1),))


def exclusive_cumprod(a) -> Tensor:
    """[x0, x1, x2] -> [1, x0, x0*x1] along the last axis."""
    return shift(cumprod(a), 1, fill=1.0)


# -- softmax family ----------------------------------------------------------

def softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (a,), bw)


def masked_softmax(a, mask: Array) -> Tensor:
    """Softmax over permitted positions only; forbidden weights are exactly 0.

    Equivalent to adding -inf energy before normalisation. A row with no
    permitted position is a caller bug and raises.
    """
    a = as_tensor(a)
    keep = np.asarray(mask, dtype=bool)
    keep = np.broadcast_to(keep, a.shape)
    if not keep.any(axis=-1).all():
        raise ValueError("masked_softmax: a row is fully masked")
    neg = np.where(keep, a.value, -np.inf)
    z = neg - neg.max(axis=-1, keepdims=True)
    ez = np.where(keep, np.exp(np.where(keep, z, 0.0)), 0.0)
    y = ez / ez.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_node(y, (a,), bw)
