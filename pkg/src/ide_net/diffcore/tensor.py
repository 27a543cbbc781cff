from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeMismatch(ValueError):
    pass


class Tensor:
    """An n-d float64 array that remembers how it was computed.

    Each op records its parents and a closure that, given ``self.grad``,
    adds the parents' gradient contributions. ``backward`` walks the graph in
    reverse topological order. Gradients accumulate until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "_grad_owned")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._grad_owned = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[Tensor], None]] = None
        self.name = name

    # -- bookkeeping ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)
        self._grad_owned = True

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray):
        # The first contribution is stored without copying (ops may hand the
        # same array to several parents), so it is never modified in place;
        # a second contribution allocates a fresh array that we then own.
        if self.grad is None:
            self.grad = np.asarray(g, dtype=DTYPE).reshape(self.data.shape)
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def backward(self, grad: Optional[np.ndarray] = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.data.shape:
            raise ShapeMismatch(f"seed gradient shape {grad.shape} != {self.data.shape}")

        order = _topological_order(self)
        # Interior gradients are rebuilt on every pass; only leaves accumulate
        # across passes.
        for node in order:
            if node._backward is not None:
                node.grad = None
                node._grad_owned = False
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        from . import ops

        return ops.add(as_tensor(other), ops.scale(self, -1.0))

    def __mul__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from . import ops

        if np.isscalar(other):
            return ops.scale(self, 1.0 / float(other))
        raise TypeError("only division by a scalar is supported")

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.slice(self, index)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], None]) -> Tensor:
    """Create an op output. ``backward(out)`` reads ``out.grad`` and
    accumulates into the parents that require gradients."""
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        # the node is passed in at call time; capturing it here would make a
        # reference cycle that keeps whole graphs alive until the cyclic GC runs
        out._backward = backward
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def zero_grad(params: Iterable[Tensor]):
    for p in params:
        p.zero_grad()
