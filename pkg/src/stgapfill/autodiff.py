"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every operation returns a ``Tensor`` that remembers its parent
tensors and a closure computing the parents' gradients from its own. Calling
``Tensor.backward()`` walks the graph once in reverse topological order and
accumulates gradients into every tensor with ``requires_grad=True``.

Gradient accumulation order is fixed by graph construction order, so results
are bit-reproducible run to run. Operations where no input requires a
gradient record nothing, which keeps inference passes tape-free.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over axes that numpy broadcasting expanded from `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-d array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction -----------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph traversal ---------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable gradient buffer."""
        if self._backward is None and not self.requires_grad:
            raise GraphError("backward() on a tensor with no recorded graph")
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.asarray(grad) if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(lift(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(lift(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and not isinstance(shape[0], int) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def lift(x) -> Tensor:
    """Wrap a plain array or scalar as a constant tensor."""
    return x if isinstance(x, Tensor) else Tensor(x)


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out_data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out_data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    out_data = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._result(out_data, (a, b), backward)


def neg(a) -> Tensor:
    a = lift(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with batched leading dims; both operands must be >= 2-d."""
    a, b = lift(a), lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires operands with at least 2 dimensions")
    out_data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._result(out_data, (a, b), backward)


def relu(a) -> Tensor:
    a = lift(a)
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward)


def sqrt(a) -> Tensor:
    a = lift(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out_data,)

    return Tensor._result(out_data, (a,), backward)


# -- shape manipulation --------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = lift(a)
    old_shape = a.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return Tensor._result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> Tensor:
    a = lift(a)
    inverse = np.argsort(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._result(a.data.transpose(axes), (a,), backward)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return Tensor._result(out_data, tuple(parts), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries starting at `start` along `axis`."""
    a = lift(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    full_shape = a.shape

    def backward(g):
        out = np.zeros(full_shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return Tensor._result(a.data[index], (a,), backward)


def pad(a, pad_width) -> Tensor:
    """Zero-pad; `pad_width` as for np.pad with constant mode."""
    a = lift(a)
    index = tuple(slice(lo, lo + size) for (lo, _), size in zip(pad_width, a.shape))

    def backward(g):
        return (g[index],)

    return Tensor._result(np.pad(a.data, pad_width), (a,), backward)


def take_flat(a, flat_index: np.ndarray) -> Tensor:
    """Gather from the flattened array; backward scatter-adds into place."""
    a = lift(a)
    size = a.data.size
    dtype = a.dtype

    def backward(g):
        acc = np.zeros(size, dtype=dtype)
        np.add.at(acc, flat_index.ravel(), g.ravel())
        return (acc.reshape(a.shape),)

    return Tensor._result(a.data.reshape(-1)[flat_index], (a,), backward)


# -- reductions ----------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    shape = a.shape

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims).copy(),)

    return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = lift(a)
    shape = a.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims) / count,)

    return Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


# -- attention-specific pieces ---------------------------------------------------


def mask_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is True with a constant (no gradient there)."""
    a = lift(a)
    mask = np.broadcast_to(mask, a.shape)

    def backward(g):
        return (np.where(mask, 0.0, g),)

    return Tensor._result(np.where(mask, value, a.data), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax tolerant of -inf entries; rows that are all -inf come out all-zero."""
    a = lift(a)
    peak = np.max(a.data, axis=axis, keepdims=True)
    dead_rows = ~np.isfinite(peak)
    shifted = a.data - np.where(dead_rows, 0.0, peak)
    exps = np.exp(shifted)
    total = exps.sum(axis=axis, keepdims=True)
    out_data = np.where(dead_rows, 0.0, exps / np.where(total == 0, 1.0, total))

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor._result(out_data, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply learned gain and bias."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(lift(1.0), sqrt(add(var, lift(eps))))
    return add(mul(mul(centered, inv), gain), bias)
