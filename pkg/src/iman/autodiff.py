"""Reverse-mode automatic differentiation over dense float64 arrays.

A deliberately small tape: only the operations the adaptation pipeline
needs (affine layers, ReLU, row normalization, softmax building blocks,
entropies, RBF kernel sums). Every op records a closure that routes the
incoming gradient to its parents; `Tensor.backward()` walks the graph in
reverse topological order. All arithmetic is float64.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import DimensionError, NumericError, StateError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph: value, gradient, and parent links."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple["Tensor", ...] = (), backward=None):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's `.grad`.

        Only defined for scalar-valued tensors (a loss).
        """
        if self.data.size != 1:
            raise StateError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __float__(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"cannot convert shape {self.data.shape} to float")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A graph node with no parents; gradients stop here."""
    return Tensor(x)


def leaf(x, validate: bool = True) -> Tensor:
    """A differentiable input node (parameters, inputs under test)."""
    t = Tensor(x)
    if validate and not np.all(np.isfinite(t.data)):
        raise NumericError("leaf tensor contains non-finite entries")
    return t


def detach(t: Tensor) -> Tensor:
    return Tensor(t.data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def _bw(g):
        a._accumulate(g)
        b._accumulate(g)

    out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))

    def _bw(g):
        a._accumulate(g)
        b._accumulate(-g)

    out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def _bw(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    out._backward = _bw
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))

    def _bw(g):
        a._accumulate(g / b.data)
        b._accumulate(-g * a.data / (b.data * b.data))

    out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes {a.data.shape} x {b.data.shape} do not chain"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def _bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = _bw
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.T, (a,))

    def _bw(g):
        a._accumulate(g.T)

    out._backward = _bw
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))
    mask = a.data > 0.0

    def _bw(g):
        a._accumulate(g * mask)

    out._backward = _bw
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e, (a,))

    def _bw(g):
        a._accumulate(g * e)

    out._backward = _bw
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), (a,))

    def _bw(g):
        a._accumulate(g / a.data)

    out._backward = _bw
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.data)
    out = Tensor(r, (a,))

    def _bw(g):
        a._accumulate(g * 0.5 / r)

    out._backward = _bw
    return out


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data**p, (a,))

    def _bw(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    out._backward = _bw
    return out


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a scalar; gradient flows where a > floor."""
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), (a,))
    mask = a.data > floor

    def _bw(g):
        a._accumulate(g * mask)

    out._backward = _bw
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient flows only in the interior."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    mask = (a.data > lo) & (a.data < hi)

    def _bw(g):
        a._accumulate(g * mask)

    out._backward = _bw
    return out


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def _bw(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    out._backward = _bw
    return out


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def l2_normalize_rows(a, eps: float = 0.0) -> Tensor:
    """Scale each row to unit Euclidean norm.

    eps stabilizes the division; callers validating non-zero rows may leave
    it at 0 for an exact normalization.
    """
    a = as_tensor(a)
    sq = tsum(mul(a, a), axis=1, keepdims=True)
    norm = sqrt(maximum(sq, eps) if eps > 0.0 else sq)
    return div(a, norm)


def pairwise_sqdist(x, y) -> Tensor:
    """Matrix of squared Euclidean distances between rows of x and rows of y.

    Clamped at zero: roundoff in the expanded form can dip a hair negative.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.data.ndim != 2 or y.data.ndim != 2 or x.data.shape[1] != y.data.shape[1]:
        raise DimensionError(
            f"pairwise_sqdist needs matching feature dims, got "
            f"{x.data.shape} and {y.data.shape}"
        )
    sx = tsum(mul(x, x), axis=1, keepdims=True)
    sy = tsum(mul(y, y), axis=1, keepdims=True)
    cross = mul(matmul(x, transpose(y)), -2.0)
    return maximum(add(add(sx, transpose(sy)), cross), 0.0)


def grads_of(tensors: Iterable[Tensor]) -> list[Array]:
    """Gradients of previously backpropagated leaves; zeros if unreached."""
    out = []
    for t in tensors:
        out.append(np.zeros_like(t.data) if t.grad is None else t.grad)
    return out
