import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relpose.numerics import Tensor, backward, concat, narrow, reshape, take, transpose
from relpose.numerics.tensor import tensor_mean, tensor_sum

from oracles import fd_grad, rel_error


def test_rejects_empty_extent():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_gradient_of_identity_loss_is_one():
    x = Tensor(3.0, requires_grad=True)
    backward(x)
    assert x.grad == 1.0


def test_sum_of_squares_gradient_is_two_x():
    data = np.array([1.5, -2.0, 0.25])
    x = Tensor(data, requires_grad=True)
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, 2 * data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * x)


def test_shared_subexpression_visited_once():
    # y = x * x is used twice; each path contributes exactly once
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    backward((y + y).sum())
    assert x.grad[0] == pytest.approx(8.0)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    backward(x.sum())
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_constant_inputs_record_no_graph():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(3))
    c = a * b + a
    assert not c.requires_grad
    assert c._parents == ()


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    backward((a + b).sum())
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def _check(fn, shapes, seed=0):
    rng = np.random.default_rng(seed)
    arrs = [rng.normal(size=s) for s in shapes]
    weights = None

    def loss_value():
        nonlocal weights
        out = fn(*[Tensor(a) for a in arrs]).data
        if weights is None:
            weights = np.random.default_rng(seed + 1).normal(size=out.shape)
        return float((out * weights).sum())

    loss_value()
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrs]
    out = fn(*leaves)
    backward((out * Tensor(weights)).sum())
    for leaf, arr in zip(leaves, arrs):
        assert rel_error(leaf.grad, fd_grad(loss_value, arr)) <= 1e-6


def test_elementwise_and_reduction_gradients():
    _check(lambda a, b: a * b - a, [(3, 4), (3, 4)])
    _check(lambda a: tensor_sum(a, axis=0), [(3, 4)])
    _check(lambda a: tensor_mean(a, axis=1), [(3, 4)])
    _check(lambda a: -a, [(5,)])


def test_shape_op_gradients():
    _check(lambda a: reshape(a, (6, 2)), [(3, 4)])
    _check(lambda a: transpose(a, (1, 0, 2)), [(2, 3, 4)])
    _check(lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 5)])
    _check(lambda a: take(a, [2, 0, 0, 1], axis=1), [(2, 3)])
    _check(lambda a: narrow(a, 1, 1, 4), [(2, 6, 3)])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-10, 10)))
def test_sum_gradient_is_ones(data):
    x = Tensor(data, requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones_like(data))
