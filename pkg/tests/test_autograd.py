"""Gradient checks for every primitive against central finite differences."""

import numpy as np
import pytest

from aped import autograd as ag
from aped.autograd import GradError, Tensor
from aped.rng import make_rng

from gradcheck import finite_diff_check


def rand(shape, seed, lo=-1.0, hi=1.0):
    return Tensor(make_rng(seed, "x", shape).uniform(lo, hi, size=shape), requires_grad=True)


def scalarize(t, seed=99):
    proj = make_rng(seed, "proj", t.shape).normal(size=t.shape)
    return ag.sum_(ag.mul(t, Tensor(proj)))


def test_grad_add_broadcast():
    a = rand((3, 4), 1)
    b = rand((4,), 2)
    finite_diff_check(lambda: scalarize(a + b), [a, b])


def test_grad_mul_broadcast():
    a = rand((3, 4), 3)
    b = rand((3, 1), 4)
    finite_diff_check(lambda: scalarize(ag.mul(a, b)), [a, b])


def test_grad_scale():
    a = rand((5,), 5)
    finite_diff_check(lambda: scalarize(ag.scale(a, -2.5)), [a])


def test_grad_matmul_2d():
    a = rand((3, 4), 6)
    b = rand((4, 5), 7)
    finite_diff_check(lambda: scalarize(a @ b), [a, b])


def test_grad_matmul_batched_vs_shared():
    a = rand((2, 3, 4), 8)
    w = rand((4, 5), 9)
    finite_diff_check(lambda: scalarize(a @ w), [a, w])


def test_grad_matmul_4d():
    q = rand((2, 2, 3, 4), 10)
    k = rand((2, 2, 4, 3), 11)
    finite_diff_check(lambda: scalarize(q @ k), [q, k])


def test_grad_concat():
    a = rand((2, 3), 12)
    b = rand((2, 2), 13)
    finite_diff_check(lambda: scalarize(ag.concat([a, b], axis=1)), [a, b])


def test_grad_slice():
    a = rand((4, 5), 14)
    finite_diff_check(lambda: scalarize(a[1:3, ::2]), [a])


def test_grad_reshape_transpose():
    a = rand((2, 3, 4), 15)
    finite_diff_check(lambda: scalarize(ag.transpose(ag.reshape(a, (2, 12)), (1, 0))), [a])


def test_grad_embedding_lookup():
    table = rand((6, 4), 16)
    ids = np.array([[0, 3, 3], [5, 1, 0]])
    finite_diff_check(lambda: scalarize(ag.embedding_lookup(table, ids)), [table])


def test_grad_gather_last():
    a = rand((3, 5), 17)
    idx = np.array([0, 4, 2])
    finite_diff_check(lambda: scalarize(ag.gather_last(a, idx)), [a])


def test_grad_relu():
    a = rand((4, 4), 18)
    finite_diff_check(lambda: scalarize(ag.relu(a)), [a])


def test_grad_sigmoid():
    a = rand((3, 3), 19, -3, 3)
    finite_diff_check(lambda: scalarize(ag.sigmoid(a)), [a])


def test_grad_tanh():
    a = rand((3, 3), 20, -2, 2)
    finite_diff_check(lambda: scalarize(ag.tanh(a)), [a])


def test_grad_log():
    a = rand((4, 3), 21, 0.1, 2.0)
    finite_diff_check(lambda: scalarize(ag.log(a)), [a])


def test_grad_pow_const():
    a = rand((3, 4), 22, 0.2, 2.0)
    finite_diff_check(lambda: scalarize(ag.pow_const(a, 1.7)), [a])


def test_grad_clip_interior():
    a = rand((4, 4), 23, 0.2, 0.8)
    finite_diff_check(lambda: scalarize(ag.clip(a, 0.0, 1.0)), [a])


def test_grad_masked_fill():
    a = rand((3, 4), 24)
    mask = np.zeros((3, 4), dtype=bool)
    mask[0, 1] = mask[2, 3] = True
    finite_diff_check(lambda: scalarize(ag.softmax(ag.masked_fill(a, mask, -np.inf), axis=-1)), [a])


def test_grad_sum_mean_axes():
    a = rand((3, 4), 25)
    finite_diff_check(lambda: scalarize(ag.sum_(a, axis=0)), [a])
    finite_diff_check(lambda: scalarize(ag.mean(a, axis=1)), [a])
    finite_diff_check(lambda: ag.mean(a), [a])


def test_grad_softmax():
    a = rand((3, 5), 26, -2, 2)
    finite_diff_check(lambda: scalarize(ag.softmax(a, axis=-1)), [a])


def test_grad_log_softmax():
    a = rand((3, 5), 27, -2, 2)
    finite_diff_check(lambda: scalarize(ag.log_softmax(a, axis=-1)), [a])


def test_grad_layer_norm():
    x = rand((3, 6), 28)
    g = rand((6,), 29, 0.5, 1.5)
    b = rand((6,), 30)
    finite_diff_check(lambda: scalarize(ag.layer_norm(x, g, b)), [x, g, b])


def test_grad_three_layer_network():
    x = rand((4, 5), 31)
    w1 = rand((5, 7), 32)
    b1 = rand((7,), 33)
    w2 = rand((7, 6), 34)
    b2 = rand((6,), 35)
    w3 = rand((6, 2), 36)

    def net():
        h1 = ag.relu(x @ w1 + b1)
        h2 = ag.tanh(h1 @ w2 + b2)
        return scalarize(ag.softmax(h2 @ w3, axis=-1))

    finite_diff_check(net, [x, w1, b1, w2, b2, w3])


def test_softmax_rows_sum_to_one():
    a = rand((6, 9), 37, -5, 5)
    s = ag.softmax(a, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


def test_sigmoid_at_zero():
    assert float(ag.sigmoid(Tensor(0.0)).data) == 0.5


def test_backward_sum_gives_ones():
    x = rand((3, 4), 38)
    ag.backward(ag.sum_(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_dot_gives_other_vector():
    x = rand((1, 5), 39)
    y = rand((5, 1), 40)
    ag.backward(x @ y)
    np.testing.assert_allclose(x.grad, y.data.T)
    np.testing.assert_allclose(y.grad, x.data.T)


def test_backward_accumulates_on_repeat():
    x = rand((3,), 41)
    loss = ag.sum_(ag.mul(x, x))
    ag.backward(loss)
    first = x.grad.copy()
    ag.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * first)


def test_backward_rejects_non_scalar():
    x = rand((3,), 42)
    with pytest.raises(GradError):
        ag.backward(x + x)


def test_ops_do_not_mutate_inputs():
    x = rand((4, 4), 43)
    before = x.data.copy()
    ag.layer_norm(ag.softmax(ag.relu(x), axis=-1), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(x.data, before)


def test_no_grad_builds_no_graph():
    x = rand((3, 3), 44)
    with ag.no_grad():
        y = ag.relu(x @ x)
    assert not y.requires_grad
    assert y._parents == ()


def test_softmax_cross_entropy_fused_form():
    # d(CE)/dlogits must equal probs - onehot
    logits = rand((4, 7), 45, -2, 2)
    labels = np.array([1, 0, 6, 3])
    loss = ag.scale(ag.sum_(ag.gather_last(ag.log_softmax(logits, axis=-1), labels)), -1.0)
    ag.backward(loss)
    probs = ag.softmax(Tensor(logits.data), axis=-1).data
    onehot = np.zeros((4, 7))
    onehot[np.arange(4), labels] = 1.0
    np.testing.assert_allclose(logits.grad, probs - onehot, atol=1e-12)


def test_debug_finite_check_trips():
    ag.set_debug_checks(True)
    try:
        with np.errstate(invalid="ignore"), pytest.raises(GradError):
            ag.log(Tensor(np.array([-1.0])))
    finally:
        ag.set_debug_checks(False)


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        _ = Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_axis_out_of_range():
    with pytest.raises(GradError):
        ag.softmax(Tensor(np.ones((2, 2))), axis=5)
