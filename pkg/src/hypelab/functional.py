"""
Differentiable Primitives

Elementwise arithmetic, reductions, shape operations and the fused
neural-network primitives (softmax, layer norm, GELU, losses, embedding
lookup) used by the transformer encoder.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError, InputError
from .tensor import Function, Tensor, as_tensor, unbroadcast

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return (
            unbroadcast(grad * b.data, a.shape),
            unbroadcast(grad * a.data, b.shape),
        )


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        return (
            unbroadcast(grad / b.data, a.shape),
            unbroadcast(-grad * a.data / (b.data * b.data), b.shape),
        )


class MatMul(Function):
    def forward(self, a, b):
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs
        ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


def matmul(a: Any, b: Any) -> Tensor:
    """
    Matrix product over the last two axes, batched over leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {list(a.shape)} and {list(b.shape)}")
    return MatMul.apply(a, b)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        (a,) = self.inputs
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, a.shape).copy(),)


class Reshape(Function):
    def forward(self, a, shape):
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Index(Function):
    def forward(self, a, index):
        self.index = index
        return a[index]

    def backward(self, grad):
        full = np.zeros_like(self.inputs[0].data)
        np.add.at(full, self.index, grad)
        return (full,)


class Embedding(Function):
    """Row lookup `table[ids]`; ids are a constant, not differentiated."""

    def forward(self, table, ids):
        self.ids = ids
        return table[ids]

    def backward(self, grad):
        full = np.zeros_like(self.inputs[0].data)
        np.add.at(full, self.ids, grad)
        return (full,)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(f"ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")
    return Embedding.apply(table, ids=ids)


class Softmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


def softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} is out of range for shape {list(x.shape)}")
    return Softmax.apply(x, axis=axis)


class LayerNorm(Function):
    def forward(self, x, gain, bias, eps=1e-12):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = np.mean(centered * centered, axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.inv
        return self.xhat * gain + bias

    def backward(self, grad):
        x, gain, bias = self.inputs
        n = x.shape[-1]
        gxhat = grad * gain.data
        gx = (self.inv / n) * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - self.xhat * np.sum(gxhat * self.xhat, axis=-1, keepdims=True)
        )
        return (
            gx,
            unbroadcast(grad * self.xhat, gain.shape),
            unbroadcast(grad, bias.shape),
        )


def layer_norm(x: Any, gain: Any, bias: Any, eps: float = 1e-12) -> Tensor:
    """
    Normalize over the last axis, then apply the affine `gain * xhat + bias`.
    """
    if eps <= 0:
        raise InputError(f"layer_norm eps must be positive, got {eps}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


class Gelu(Function):
    """x * Phi(x) with the exact normal CDF."""

    def forward(self, x):
        self.cdf = ndtr(x)
        return x * self.cdf

    def backward(self, grad):
        x = self.inputs[0].data
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (grad * (self.cdf + x * pdf),)


def gelu(x: Any) -> Tensor:
    return Gelu.apply(x)


class CrossEntropy(Function):
    def forward(self, logits, labels):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        logp = shifted - logsum
        self.labels = labels
        self.probs = np.exp(logp)
        rows = np.arange(labels.shape[0])
        return np.asarray(-logp[rows, labels].mean())

    def backward(self, grad):
        g = self.probs.copy()
        g[np.arange(self.labels.shape[0]), self.labels] -= 1.0
        return (g * (grad / self.labels.shape[0]),)


def cross_entropy(logits: Tensor, labels: Any) -> Tensor:
    """
    Mean negative log-likelihood of integer `labels` under softmax(`logits`).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"cross_entropy needs logits [batch, classes] and labels [batch], got {list(logits.shape)} and {list(labels.shape)}"
        )
    if labels.size == 0:
        raise InputError("cross_entropy needs at least one example")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise InputError("cross_entropy labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InputError(
            f"label out of range for {logits.shape[1]} classes: {int(labels.min()) if labels.min() < 0 else int(labels.max())}"
        )
    return CrossEntropy.apply(logits, labels=labels.astype(np.int64))


class MeanSquaredError(Function):
    def forward(self, pred, target):
        self.diff = pred - target
        return np.asarray(np.mean(self.diff * self.diff))

    def backward(self, grad):
        g = (2.0 * grad / self.diff.size) * self.diff
        return g, -g


def mse(pred: Any, target: Any) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse needs equal shapes, got {list(pred.shape)} and {list(target.shape)}")
    return MeanSquaredError.apply(pred, target)
