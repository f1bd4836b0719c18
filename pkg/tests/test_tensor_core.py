import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from unet_transformer.tensor import Tape, Tensor, backward, grad_check, make_rng, no_grad, ops, parameter, precision


def t64(a, name=None):
    with precision(np.float64):
        return parameter(np.asarray(a, dtype=np.float64), name)


def weighted_sum(out, rng):
    w = rng.standard_normal(out.shape)
    return ops.sum(ops.mul(out, w))


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_hand_case():
    a = Tensor(np.eye(2))
    b = Tensor([[2.0, 3.0], [4.0, 5.0]])
    np.testing.assert_array_equal(ops.matmul(a, b).data, [[2, 3], [4, 5]])
    np.testing.assert_array_equal(ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11]])


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_is_ones_times_b_transpose():
    rng = make_rng(0)
    with precision(np.float64):
        a = parameter(rng.standard_normal((3, 4)))
        b = parameter(rng.standard_normal((4, 2)))
        backward(ops.sum(ops.matmul(a, b)))
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 2)))


# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, math.log(3)])).data, [0.25, 0.75], rtol=1e-6)
    out = ops.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-30)


def test_softmax_mask_gives_exact_zero_and_rejects_empty_rows():
    out = ops.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    with pytest.raises(ValueError, match="fully masked"):
        ops.softmax(Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    with precision(np.float64):
        out = ops.softmax(Tensor(x), axis=-1).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all((out >= 0) & (out <= 1))


# ---------------------------------------------------------------- conv / pool / deconv

def col(values):
    return Tensor(np.asarray(values, dtype=np.float32)[:, None])


def test_conv1d_examples():
    x = col([1, 2, 3, 4])
    ones = Tensor(np.ones((3, 1, 1)))
    np.testing.assert_array_equal(ops.conv1d(x, ones).data.ravel(), [3, 6, 9, 7])
    centre = Tensor(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1))
    np.testing.assert_array_equal(ops.conv1d(x, centre).data.ravel(), [1, 2, 3, 4])
    bias = Tensor([0.5])
    np.testing.assert_array_equal(ops.conv1d(col([0, 0, 0]), ones, bias).data.ravel(), [0.5, 0.5, 0.5])


def test_conv1d_rejects_other_kernel_sizes():
    with pytest.raises(ValueError, match="kernel size 3"):
        ops.conv1d(col([1, 2]), Tensor(np.ones((5, 1, 1))))


def test_max_pool_examples():
    np.testing.assert_array_equal(ops.max_pool1d(col([1, 5, 2, 4, 3])).data.ravel(), [5, 5, 4])
    np.testing.assert_array_equal(ops.max_pool1d(col([7, 7, 7, 7])).data.ravel(), [7, 7])
    np.testing.assert_array_equal(ops.max_pool1d(col([-2])).data.ravel(), [-2])


@pytest.mark.parametrize("n", range(1, 12))
def test_max_pool_length_is_ceil_half(n):
    assert ops.max_pool1d(Tensor(np.zeros((n, 2)))).shape == (math.ceil(n / 2), 2)


def test_max_pool_gradient_goes_to_lowest_index_on_ties():
    x = parameter(np.array([[3.0], [3.0], [1.0]], dtype=np.float32))
    backward(ops.sum(ops.max_pool1d(x)))
    # windows: {pad,3,3} -> first 3; {3,1,pad} -> second 3
    np.testing.assert_array_equal(x.grad.ravel(), [1, 1, 0])


def test_max_pool_invalid_positions_act_as_minus_infinity():
    x = col([1, -5, -9, 100])
    out = ops.max_pool1d(x, valid=np.array([True, True, True, False])).data.ravel()
    np.testing.assert_array_equal(out, [1, -5])


def test_deconv_examples():
    ones = Tensor(np.ones((3, 1, 1)))
    np.testing.assert_array_equal(ops.deconv1d(col([1, 2]), ones).data.ravel(), [1, 3, 2, 2])
    np.testing.assert_array_equal(ops.deconv1d(col([0, 0, 0]), ones).data.ravel(), np.zeros(6))


@pytest.mark.parametrize("m", [1, 2, 5, 19])
def test_deconv_output_length(m):
    assert ops.deconv1d(Tensor(np.zeros((m, 3))), Tensor(np.zeros((3, 3, 4)))).shape == (2 * m, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_deconv_is_stride2_conv_input_gradient(m, d_in, d_out, seed):
    rng = make_rng(seed)
    with precision(np.float64):
        w = rng.standard_normal((3, d_in, d_out))
        g = rng.standard_normal((m, d_out))
        x = parameter(rng.standard_normal((2 * m, d_in)))
        backward(ops.sum(ops.mul(ops.conv1d(x, Tensor(w), stride=2), g)))
        deconv = ops.deconv1d(Tensor(g), Tensor(np.transpose(w, (0, 2, 1)))).data
    np.testing.assert_allclose(deconv, x.grad, rtol=0, atol=1e-10)


# ---------------------------------------------------------------- other primitives

def test_relu_and_layer_norm_and_cross_entropy():
    np.testing.assert_array_equal(ops.relu(Tensor([-2.0, 3.0])).data, [0, 3])
    np.testing.assert_array_equal(ops.layer_norm(Tensor(np.full((2, 5), 4.2))).data, np.zeros((2, 5)))
    ce = ops.cross_entropy_row(Tensor(np.zeros(4)), 2)
    assert ce.item() == pytest.approx(math.log(4), abs=1e-6)


def test_dropout_scales_survivors():
    x = Tensor(np.ones((1000,)))
    out = ops.dropout(x, 0.8, make_rng(3)).data
    assert set(np.unique(out)) <= {0.0, np.float32(1 / 0.8)}
    assert ops.dropout(x, 1.0, make_rng(3)) is x


def test_embedding_rejects_out_of_range_ids_and_accumulates_rows():
    table = parameter(np.arange(12, dtype=np.float32).reshape(4, 3))
    with pytest.raises(ValueError, match="token id 7 .* size 4"):
        ops.embedding(table, [1, 7])
    backward(ops.sum(ops.embedding(table, [1, 1, 3])))
    np.testing.assert_array_equal(table.grad[:, 0], [0, 2, 0, 1])


# ---------------------------------------------------------------- backward

def test_backward_examples():
    x = parameter(np.ones((2, 3), dtype=np.float32))
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    y = parameter(np.array([1.0, 2.0], dtype=np.float32))
    unused = parameter(np.ones(3, dtype=np.float32))
    backward(ops.sum(ops.square(y)), [y, unused])
    np.testing.assert_array_equal(y.grad, [2, 4])
    np.testing.assert_array_equal(unused.grad, np.zeros(3))


def test_backward_rejects_non_scalar():
    x = parameter(np.ones(3, dtype=np.float32))
    with pytest.raises(ValueError, match="scalar"):
        backward(ops.mul(x, 2.0))


def test_tape_visits_each_record_once_in_topological_order():
    x = parameter(np.ones(3, dtype=np.float32))
    a = ops.mul(x, 2.0)
    b = ops.add(a, a)  # diamond
    loss = ops.sum(ops.mul(b, a))
    tape = Tape.from_loss(loss)
    outputs = [r.output for r in tape.records]
    assert len(outputs) == len(set(outputs)) == 4
    position = {r.output: i for i, r in enumerate(tape.records)}
    for r in tape.records:
        assert all(position[i] < position[r.output] for i in r.inputs if i in position)
    tape.backward(loss)
    # loss = sum(4x * 2x) -> 16x
    np.testing.assert_array_equal(x.grad, [16, 16, 16])


def test_no_grad_records_nothing():
    x = parameter(np.ones(2, dtype=np.float32))
    with no_grad():
        y = ops.mul(x, 3.0)
    assert not y.requires_grad


# ---------------------------------------------------------------- grad_check

def test_grad_check_scalar_square():
    x = t64([3.0])
    report = grad_check(lambda: ops.sum(ops.square(x)), [x])
    assert report.passed
    np.testing.assert_allclose(2 * x.data, [6.0])


PRIMITIVE_CASES = {
    "matmul": lambda r: ([t64(r.standard_normal((3, 4))), t64(r.standard_normal((4, 2)))], lambda a, b: ops.matmul(a, b)),
    "softmax": lambda r: ([t64(r.standard_normal((3, 5)))], lambda x: ops.softmax(x)),
    "layer_norm": lambda r: (
        [t64(r.standard_normal((3, 6))), t64(r.standard_normal(6)), t64(r.standard_normal(6))],
        lambda x, g, b: ops.layer_norm(x, g, b),
    ),
    "conv1d": lambda r: (
        [t64(r.standard_normal((2, 5, 3))), t64(r.standard_normal((3, 3, 4))), t64(r.standard_normal(4))],
        lambda x, w, b: ops.conv1d(x, w, b),
    ),
    "conv1d_stride2": lambda r: (
        [t64(r.standard_normal((7, 3))), t64(r.standard_normal((3, 3, 2)))],
        lambda x, w: ops.conv1d(x, w, stride=2),
    ),
    "max_pool1d": lambda r: ([t64(r.standard_normal((2, 7, 3)))], lambda x: ops.max_pool1d(x)),
    "deconv1d": lambda r: (
        [t64(r.standard_normal((2, 4, 3))), t64(r.standard_normal((3, 3, 2))), t64(r.standard_normal(2))],
        lambda x, w, b: ops.deconv1d(x, w, b),
    ),
    "relu": lambda r: ([t64(r.standard_normal((4, 5)))], lambda x: ops.relu(x)),
    "tanh_sigmoid": lambda r: ([t64(r.standard_normal((4, 5)))], lambda x: ops.mul(ops.tanh(x), ops.sigmoid(x))),
    "embedding": lambda r: ([t64(r.standard_normal((5, 3)))], lambda t: ops.embedding(t, [0, 4, 4, 2])),
    "cross_entropy": lambda r: (
        [t64(r.standard_normal((2, 3, 5)))],
        lambda x: ops.cross_entropy(x, np.array([[0, 4, 2], [1, 1, 3]]), np.array([[1, 1, 0], [1, 0, 1]])),
    ),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients_match_central_differences(name):
    rng = make_rng(11)
    inputs, f = PRIMITIVE_CASES[name](rng)
    with precision(np.float64):
        probe = f(*inputs)
        weights = rng.standard_normal(probe.shape)
        report = grad_check(lambda: ops.sum(ops.mul(f(*inputs), weights)), inputs)
    assert report.passed, str(report)


def test_grad_check_catches_corrupted_conv_backward(monkeypatch):
    from unet_transformer.tensor import ops as ops_module

    real = ops_module.conv1d_backward_input
    monkeypatch.setattr(ops_module, "conv1d_backward_input", lambda *a, **k: -real(*a, **k))
    rng = make_rng(5)
    x, w = t64(rng.standard_normal((5, 2))), t64(rng.standard_normal((3, 2, 2)))
    weights = rng.standard_normal((5, 2))
    report = grad_check(lambda: ops.sum(ops.mul(ops.conv1d(x, w), weights)), [x, w])
    assert not report.passed


def test_same_seed_same_draws():
    assert np.array_equal(make_rng(42).standard_normal(10), make_rng(42).standard_normal(10))
