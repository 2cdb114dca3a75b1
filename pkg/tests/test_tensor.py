"""Graph mechanics of the tensor engine.

Per-operation gradient values get their thorough treatment in
test_gradcheck.py; this file pins the plumbing: accumulation through shared
nodes, traversal order, shape validation, and the scalar-loss contract.
"""

import numpy as np
import pytest

from quicknet import tensor as T
from quicknet.errors import ContractError, ShapeError


def test_backward_requires_scalar():
    t = T.Tensor(np.ones(3))
    with pytest.raises(ContractError):
        T.backward(t)


def test_gradient_accumulates_through_shared_node():
    # y = sum(x*x_again) where both operands are the same node: dy/dx = 2x
    x = T.Parameter(np.array([1.0, 2.0, 3.0]))
    y = T.tensor_sum(T.mul(x, x))
    T.backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_diamond_graph_accumulates_once_per_path():
    # z = sum(x + x) routes two gradient paths into x
    x = T.Parameter(np.array([1.0, -2.0]))
    z = T.tensor_sum(T.add(x, x))
    T.backward(z)
    np.testing.assert_allclose(x.grad, [2.0, 2.0])


def test_deep_chain_does_not_recurse():
    # iterative traversal must survive graphs deeper than the call stack
    x = T.Parameter(np.array([1.0]))
    node = x
    for _ in range(5000):
        node = T.add_const(node, 0.0)
    T.backward(T.tensor_sum(node))
    np.testing.assert_allclose(x.grad, [1.0])


def test_matmul_shape_mismatch():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.ones((4, 2)))
    with pytest.raises(ShapeError):
        T.matmul(a, b)


def test_add_bias_broadcast_gradient():
    x = T.Tensor(np.ones((4, 3)))
    b = T.Parameter(np.zeros(3))
    T.backward(T.tensor_sum(T.add(x, b)))
    np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])


def test_add_rejects_general_broadcast():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.ones((2, 1)))
    with pytest.raises(ShapeError):
        T.add(a, b)


def test_mul_scalar_operand_sums_gradient():
    s = T.Parameter(np.array(2.0))
    x = T.Tensor(np.array([1.0, 2.0, 3.0]))
    T.backward(T.tensor_sum(T.mul(s, x)))
    np.testing.assert_allclose(s.grad, 6.0)


def test_relu_gate():
    x = T.Parameter(np.array([-1.0, 0.0, 2.0]))
    T.backward(T.tensor_sum(T.relu(x)))
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0])


def test_sigmoid_extreme_inputs_stable():
    z = T.Tensor(np.array([-800.0, 0.0, 800.0]))
    y = T.sigmoid(z)
    assert np.isfinite(y.data).all()
    np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0], atol=1e-12)


def test_operations_do_not_mutate_inputs():
    x = T.Tensor(np.array([1.0, 2.0]))
    before = x.data.copy()
    T.add_const(T.mul_const(T.relu(x), 3.0), 1.0)
    np.testing.assert_array_equal(x.data, before)


def test_parameter_starts_with_clean_state():
    p = T.Parameter(np.ones((2, 2)), name="w")
    assert p.step == 0
    assert p.grad is None
    assert not p.frozen
    np.testing.assert_array_equal(p.moment1, 0)
    np.testing.assert_array_equal(p.moment2, 0)


def test_flatten_rows_round_trip_gradient():
    x = T.Parameter(np.arange(24.0).reshape(2, 3, 4))
    T.backward(T.tensor_sum(T.flatten_rows(x)))
    assert x.grad.shape == x.data.shape
    np.testing.assert_allclose(x.grad, 1.0)
