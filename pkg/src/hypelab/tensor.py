"""
Tensor and Reverse-Mode Differentiation

A define-by-run autograd engine over 64-bit numpy arrays. Every primitive is
a `Function` subclass with an explicit `forward` and `backward`; calling
`Tensor.backward()` on a scalar walks the recorded graph once in reverse
topological order and then releases it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Any, Sequence

import numpy as np

from .errors import DimensionError, UsageError

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """
    Sum out broadcasted dimensions so that `grad` matches `shape`.
    """
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


class Function:
    """
    Base class for differentiable primitives.

    `forward` receives the raw arrays of the input tensors and may stash
    whatever it needs for the backward pass on `self`. `backward` receives
    dL/d(output) and returns one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        func = cls(*tensors)
        out = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _ctx=func if requires_grad else None)


class Tensor:
    """
    Dense array of 64-bit reals with an optional gradient.

    Args:
        data: Anything numpy can turn into a float64 array
        requires_grad: Whether backward should populate `grad` for this tensor
        name: Optional label, used by parameter containers and error messages
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
        _ctx: Function | None = None,
    ):
        self.data: np.ndarray = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._ctx = _ctx

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> Tensor:
        return F.Add.apply(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return F.Add.apply(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return F.Sub.apply(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return F.Sub.apply(other, self)

    def __neg__(self) -> Tensor:
        return F.Neg.apply(self)

    def __mul__(self, other: Any) -> Tensor:
        return F.Mul.apply(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return F.Mul.apply(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return F.Div.apply(self, other)

    def __matmul__(self, other: Any) -> Tensor:
        return F.matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return F.Index.apply(self, index=index)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return F.Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> Tensor:
        return F.Transpose.apply(self, axes=axes or None)

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def backward(self, retain_graph: bool = False) -> None:
        """
        Populate `.grad` of every tensor that requires it with dself/dtensor.

        Leaf gradients accumulate across calls until `zero_grad`; the graph
        is released afterwards unless `retain_graph` is set.
        """
        if self.size != 1 or self.ndim != 0:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that is not part of a graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            node.grad = grad if node.grad is None else node.grad + grad
            if node._ctx is None:
                continue
            for parent, g in zip(node._ctx.inputs, node._ctx.backward(grad)):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.shape:
                    raise DimensionError(
                        f"gradient of shape {g.shape} does not match tensor of shape {parent.shape}"
                    )
                key = id(parent)
                grads[key] = g if key not in grads else grads[key] + g

        if not retain_graph:
            for node in order:
                node._ctx = None


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


from . import functional as F  # noqa: E402
