"""A small reverse-mode autodiff tensor over float64 numpy arrays."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Dense float64 array that records the operation that produced it.

    Gradients are accumulated into ``.grad`` of leaf tensors that have
    ``requires_grad=True`` when :meth:`backward` is called on a scalar.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_acc")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple[Tensor, ...] = (),
        _backward: BackwardFn | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._acc: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        for node in order:
            node._acc = None
        self._acc = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            g = node._acc
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = np.array(g, dtype=np.float64) if node.grad is None else np.asarray(node.grad + g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                parent._acc = pg if parent._acc is None else parent._acc + pg
        for node in order:
            node._acc = None

    # elementwise arithmetic, broadcasting against scalars and tensors

    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        out = self.data + other.data
        return make_node(out, (self, other), lambda g: (unbroadcast(g, self.shape), unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return make_node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_node(
            a * b,
            (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data
        return make_node(
            a / b,
            (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
        )

    def sum(self) -> Tensor:
        shape = self.shape
        return make_node(self.data.sum(), (self,), lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self) -> Tensor:
        n = self.data.size
        shape = self.shape
        return make_node(self.data.mean(), (self,), lambda g: (np.full(shape, g / n),))

    def reshape(self, *shape) -> Tensor:
        old = self.shape
        return make_node(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))


class Param(Tensor):
    """Trainable leaf tensor. ``value`` aliases ``data``."""

    __slots__ = ("velocity",)

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)
        self.velocity: np.ndarray | None = None

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap an op result; the graph edge is kept only if some parent needs grads."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()
