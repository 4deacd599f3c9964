import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tied_mixer.autograd import Rng, Tape, Tensor, backward
from tied_mixer.autograd.ops import (
    activation,
    add_broadcast,
    clamp_magnitude,
    count_flops,
    dropout,
    matmul,
    mul,
    normalize,
    row_softmax,
    sum_all,
)
from tied_mixer.errors import ContractError, DimensionError, ParameterError

from .utils import numeric_gradient, relative_error


def _grad_check(make_loss, *tensors, tolerance=1e-6):
    with Tape() as tape:
        loss = make_loss()
    backward(loss, tape)
    for tensor in tensors:
        numeric = numeric_gradient(lambda: make_loss().item(), tensor)
        assert relative_error(tensor.grad, numeric) < tolerance, tensor.name


@pytest.mark.parametrize(
    ["a", "b", "expected"],
    [
        [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 2.0], [3.0, 4.0]], [[1.0, 2.0], [3.0, 4.0]]],
        [[[1.0, 0.0], [0.0, 0.0]], [[5.0, 6.0], [7.0, 8.0]], [[5.0, 6.0], [0.0, 0.0]]],
    ],
)
def test_matmul_examples(a, b, expected):
    assert matmul(a, b).data.tolist() == expected


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError) as e:
        matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


def test_matmul_gradient():
    rng = Rng(1)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="b")
    w = rng.normal(size=(3, 2))
    _grad_check(lambda: sum_all(mul(matmul(a, b), w)), a, b)


@pytest.mark.parametrize(
    ["b", "expected"],
    [
        [[[0.0, 0.0], [0.0, 0.0]], [[1.0, 2.0], [3.0, 4.0]]],
        [[1.0, 1.0], [[2.0, 3.0], [4.0, 5.0]]],
    ],
)
def test_add_broadcast_examples(b, expected):
    assert add_broadcast([[1.0, 2.0], [3.0, 4.0]], b).data.tolist() == expected


def test_add_broadcast_gradient_is_column_sum():
    rng = Rng(2)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="a")
    b = Tensor(rng.normal(size=3), requires_grad=True, name="b")
    upstream = rng.normal(size=(4, 3))
    with Tape() as tape:
        loss = sum_all(mul(add_broadcast(a, b), upstream))
    backward(loss, tape)
    np.testing.assert_allclose(b.grad, upstream.sum(axis=0), rtol=1e-12)
    _grad_check(lambda: sum_all(mul(add_broadcast(a, b), upstream)), a, b)


def test_add_broadcast_rejects_growing_operand():
    with pytest.raises(DimensionError):
        add_broadcast(np.zeros(3), np.zeros((2, 3)))


def test_relu():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = activation(x, "relu")
        loss = sum_all(y)
    backward(loss, tape)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    assert x.grad[0] == 0.0 and x.grad[2] == 1.0


def test_gelu_gradient():
    x = Tensor(Rng(3).normal(0.0, 2.0, 20), requires_grad=True, name="x")
    _grad_check(lambda: sum_all(activation(x, "gelu")), x)


def test_unknown_activation():
    with pytest.raises(ParameterError):
        activation([1.0], "tanh")


def test_row_softmax_examples():
    assert row_softmax([[0.0, 0.0, 0.0, 0.0]]).data.tolist() == [[0.25] * 4]
    out = row_softmax([[1000.0, 1000.0]]).data
    assert np.isfinite(out).all() and out.tolist() == [[0.5, 0.5]]


def test_row_softmax_gradient():
    rng = Rng(4)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True, name="x")
    w = rng.normal(size=(3, 5))
    _grad_check(lambda: sum_all(mul(row_softmax(x), w)), x)


def test_normalize_constant_input():
    out = normalize(np.full((4, 3), 7.0), "layer", np.ones(3), np.zeros(3))
    assert np.abs(out.data).max() == 0.0


def test_layer_normalize_rows():
    x = Rng(5).normal(3.0, 2.0, (6, 4))
    out = normalize(x, "layer", np.ones(4), np.zeros(4)).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    var = x.var(axis=1)
    np.testing.assert_allclose(out.var(axis=1), var / (var + 1e-5), rtol=1e-9)


@pytest.mark.parametrize("kind", ["layer", "batch"])
def test_normalize_gradient(kind):
    rng = Rng(6)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True, name="x")
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True, name="gamma")
    beta = Tensor(rng.normal(size=3), requires_grad=True, name="beta")
    w = rng.normal(size=(4, 3))
    _grad_check(
        lambda: sum_all(mul(normalize(x, kind, gamma, beta), w)), x, gamma, beta, tolerance=1e-5
    )


def test_dropout_degenerate_cases():
    x = Tensor(Rng(7).normal(size=(5, 5)))
    assert dropout(x, 0.0, training=True, rng=Rng(0)) is x
    assert dropout(x, 0.3, training=False) is x


def test_dropout_statistics():
    small = dropout(np.ones(10_000), 0.5, training=True, rng=Rng(8)).data
    assert abs((small > 0).mean() - 0.5) < 0.02
    x = Rng(9).uniform(1.0, 2.0, 250_000)
    out = dropout(x, 0.5, training=True, rng=Rng(10)).data
    assert abs(out.mean() - x.mean()) < 0.02 * x.mean()


def test_dropout_rate_must_stay_below_one():
    with pytest.raises(ParameterError):
        dropout(np.ones(3), 1.0, training=True, rng=Rng(0))


def test_sum_gradient_is_ones():
    x = Tensor(np.zeros((2, 3, 4)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    backward(loss, tape)
    assert (x.grad == 1.0).all()


def test_gradients_accumulate_over_uses():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    w = np.array([0.5, 1.5, -1.0])
    with Tape() as tape:
        once = sum_all(mul(x, w))
    backward(once, tape)
    single = x.grad.copy()
    with Tape() as tape:
        twice = sum_all(add_broadcast(mul(x, w), mul(x, w)))
    backward(twice, tape)
    np.testing.assert_array_equal(x.grad, 2 * single)


def test_backward_needs_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = mul(x, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_operations_outside_a_tape_are_not_recorded():
    x = Tensor([1.0], requires_grad=True)
    y = mul(x, 3.0)
    assert not y.requires_grad
    with Tape() as tape:
        loss = sum_all(mul(x, 3.0))
    assert len(tape) == 2 and loss.requires_grad


def test_flop_counter_counts_matmul():
    with count_flops() as counter:
        matmul(np.ones((3, 4)), np.ones((4, 5)))
    assert counter.total == 2 * 3 * 5 * 4


def test_rng_streams_are_reproducible():
    a, b = Rng(11), Rng(11)
    assert a.normal(size=5).tolist() == b.normal(size=5).tolist()
    assert (
        Rng(11).child("init").random(3).tolist() == Rng(11).child("init").random(3).tolist()
    )


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
    arrays(np.float64, (4, 2), elements=st.floats(-3, 3)),
)
def test_matmul_gradient_matches_closed_form(a_values, b_values):
    a = Tensor(a_values, requires_grad=True)
    b = Tensor(b_values, requires_grad=True)
    with Tape() as tape:
        loss = sum_all(matmul(a, b))
    backward(loss, tape)
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b_values.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a_values.T @ np.ones((3, 2)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(values):
    out = row_softmax(values).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert (out > 0).all()


def test_clamp_magnitude_passes_no_gradient_to_moved_entries():
    x = Tensor([0.0, -1e-9, 0.5, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(mul(clamp_magnitude(x, 1e-3), [1.0, 2.0, 3.0, 4.0]))
    backward(loss, tape)
    assert x.grad.tolist() == [0.0, 0.0, 3.0, 4.0]
    with pytest.raises(ParameterError):
        clamp_magnitude(x, 0.0)
