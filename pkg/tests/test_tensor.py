import math

import mpmath
import numpy as np
import pytest

from hypelab import functional as F
from hypelab.errors import DimensionError, InputError, UsageError
from hypelab.tensor import Tensor, no_grad, unbroadcast


def test_matmul_identity_and_zero():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(F.matmul(np.eye(3), a).data, a)
    out = F.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [0.0]])
    assert np.array_equal(out.data, np.zeros((2, 1)))


def test_matmul_matches_triple_loop():
    gen = np.random.default_rng(0)
    a, b = gen.normal(size=(4, 5)), gen.normal(size=(5, 3))
    naive = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                naive[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(F.matmul(a, b).data - naive)) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError, match=r"\[2, 3\] and \[2, 3\]"):
        F.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_batched_matmul_gradient_unbroadcasts():
    a = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    w = Tensor(np.ones((4, 5)), requires_grad=True)
    (a @ w).sum().backward()
    assert w.grad.shape == (4, 5)
    assert np.all(w.grad == 6.0)


def test_softmax_examples():
    assert np.allclose(F.softmax([0.0, 0.0]).data, [0.5, 0.5], atol=0, rtol=0)
    stable = F.softmax([1000.0, 0.0]).data
    assert abs(stable[0] - 1.0) < 1e-12 and abs(stable[1]) < 1e-12
    x = np.array([1.0, 2.0, 3.0])
    oracle = np.exp(x) / np.exp(x).sum()
    assert np.max(np.abs(F.softmax(x).data - oracle)) < 1e-12


def test_layer_norm_examples():
    gain, bias = np.ones(4), np.zeros(4)
    assert np.array_equal(F.layer_norm([5.0, 5.0, 5.0, 5.0], gain, bias).data, np.zeros(4))
    b = np.array([0.5, -1.0, 2.0, 3.0])
    assert np.array_equal(F.layer_norm([1.0, 7.0, 3.0, 4.0], np.zeros(4), b).data, b)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    oracle = (x - 2.5) / math.sqrt(1.25 + 1e-12)
    assert np.max(np.abs(F.layer_norm(x, gain, bias, eps=1e-12).data - oracle)) < 1e-10


def test_gelu_examples():
    assert F.gelu(0.0).item() == 0.0
    assert abs(F.gelu(10.0).item() - 10.0) < 1e-9
    assert abs(F.gelu(1.0).item() - float(mpmath.ncdf(1))) < 1e-12


def test_losses():
    assert abs(F.cross_entropy(np.zeros((1, 4)), [2]).item() - math.log(4)) < 1e-12
    x = np.array([0.3, -2.0, 5.0])
    assert F.mse(x, x).item() == 0.0
    expected = -float(mpmath.log(mpmath.e**2 / (mpmath.e**2 + 1)))
    assert abs(F.cross_entropy([[2.0, 0.0]], [0]).item() - expected) < 1e-12


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(InputError, match="out of range"):
        F.cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(DimensionError):
        F.cross_entropy(np.zeros((2, 3)), [0])


def test_sum_gradient_is_ones():
    w = Tensor(np.random.default_rng(1).normal(size=(2, 3, 4)), requires_grad=True)
    w.sum().backward()
    assert np.array_equal(w.grad, np.ones((2, 3, 4)))


def test_mse_gradient_scalar():
    w = Tensor(3.0, requires_grad=True)
    F.mse(w, 0.0).backward()
    assert w.grad == pytest.approx(6.0)


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad == pytest.approx(5.0)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError, match="scalar"):
        (x * 2.0).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    with pytest.raises(UsageError):
        y.backward()


def test_graph_released_after_backward():
    x = Tensor(np.ones(2), requires_grad=True)
    y = (x * 3.0).sum()
    y.backward()
    assert y.is_leaf


def test_deep_chain_does_not_recurse():
    x = Tensor(1.0, requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.backward()
    assert x.grad == pytest.approx(1.0)


def test_unbroadcast():
    assert unbroadcast(np.ones((4, 2, 3)), (3,)).tolist() == [8.0, 8.0, 8.0]
    assert unbroadcast(np.ones((2, 3)), (2, 1)).tolist() == [[3.0], [3.0]]
