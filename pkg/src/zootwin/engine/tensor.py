"""Dense float tensors with tape-free reverse-mode autodiff.

Every differentiable op builds a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
``backward`` walks the resulting DAG in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = [np.float32]


class ShapeError(ValueError):
    """Raised when operand dimensions do not line up."""


class UsageError(RuntimeError):
    pass


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype of newly created tensors.

    The f64 path exists for finite-difference reference checks; production
    code always runs in f32.
    """
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


def _as_array(data) -> np.ndarray:
    dt = _DTYPE[-1]
    if isinstance(data, np.ndarray) and data.dtype == dt:
        return data
    return np.asarray(data, dtype=dt)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- construction -------------------------------------------------
    @classmethod
    def _make(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- elementwise arithmetic -----------------------------------------
    def __add__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a), _unbroadcast(g, b)

        return Tensor._make(self.data + other.data, (self, other), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a), _unbroadcast(-g, b)

        return Tensor._make(self.data - other.data, (self, other), bw, "sub")

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        other = _lift(other)
        x, y = self.data, other.data

        def bw(g):
            return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

        return Tensor._make(x * y, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        x, y = self.data, other.data

        def bw(g):
            return _unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)

        return Tensor._make(x / y, (self, other), bw, "div")

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data

        def bw(g):
            return (g * p * x ** (p - 1),)

        return Tensor._make(x**p, (self,), bw, "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    # -- unary maps -----------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,), "exp")

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,), "log")

    def sqrt(self):
        y = np.sqrt(self.data)
        return Tensor._make(y, (self,), lambda g: (g * 0.5 / y,), "sqrt")

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1 - y * y),), "tanh")

    def sigmoid(self):
        y = _sigmoid(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y * (1 - y),), "sigmoid")

    def relu(self):
        keep = self.data > 0
        return Tensor._make(self.data * keep, (self,), lambda g: (g * keep,), "relu")

    def softplus(self):
        x = self.data
        y = np.logaddexp(0, x).astype(x.dtype, copy=False)
        return Tensor._make(y, (self,), lambda g: (g * _sigmoid(x),), "softplus")

    def clip(self, lo: float, hi: float):
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor._make(np.clip(x, lo, hi), (self,), lambda g: (g * inside,), "clip")

    # -- reductions and shape ops ---------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        y = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(self.data.dtype)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(y, (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        shape, dt = self.shape, self.data.dtype

        def bw(g):
            full = np.zeros(shape, dtype=dt)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), bw, "getitem")

    # -- autodiff -------------------------------------------------------
    def backward(self, grad=None) -> dict[int, np.ndarray]:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad.

        Returns a map from ``id(leaf)`` to the gradient array that was added.
        """
        if grad is None:
            if self.data.size != 1:
                raise UsageError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        return _run_backward(self, np.asarray(grad, dtype=self.data.dtype))

    def zero_grad(self):
        self.grad = None


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
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
    return order


def _run_backward(root: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(root): seed}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(_toposort(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.data.dtype)
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return leaves


def grad(loss: Tensor, params: Iterable[Tensor]) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` for ``params``, keyed by ``id(param)``.

    Leaves' ``.grad`` is reset first so the result is not polluted by
    earlier accumulation.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    return {id(p): (p.grad if p.grad is not None else np.zeros_like(p.data)) for p in params}


# -- multi-input ops ------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = _lift(a), _lift(b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dims")
    if x.shape[-1] != y.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {x.shape} @ {y.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return Tensor._make(x @ y, (a, b), bw, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)

    def bw(g):
        return _unbroadcast(np.where(cond, g, 0), a.shape), _unbroadcast(np.where(cond, 0, g), b.shape)

    return Tensor._make(np.where(cond, a.data, b.data).astype(a.data.dtype, copy=False), (a, b), bw, "where")


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad=True, name=name)
