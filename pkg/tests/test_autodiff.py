import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxflow import autodiff as ad
from ctxflow.autodiff import AdamState, FiniteError, ShapeError, Tensor


def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_hand_example():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_mentions_both_shapes():
    with pytest.raises(ShapeError, match=r"2, 3.*4, 2"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_matmul_gradient_flows_to_both_inputs():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0], [4.0]], requires_grad=True)
    ad.reduce_sum(ad.matmul(a, b)).backward()
    np.testing.assert_array_equal(a.grad, [[3.0, 4.0]])
    np.testing.assert_array_equal(b.grad, [[1.0], [2.0]])


def test_matmul_broadcasts_leading_batch_axis():
    prop = Tensor(np.full((3, 3), 1.0 / 3.0))
    h = Tensor(np.arange(24, dtype=float).reshape(2, 3, 4), requires_grad=True)
    out = ad.matmul(prop, h)
    assert out.shape == (2, 3, 4)
    ad.reduce_sum(out).backward()
    assert h.grad.shape == (2, 3, 4)


def test_sigmoid_at_zero():
    assert float(ad.sigmoid(Tensor(0.0)).data) == 0.5


def test_sigmoid_extreme_inputs_stay_finite():
    out = ad.sigmoid(Tensor([-745.0, 745.0]))
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-300)


def test_hadamard_hand_example():
    out = ad.hadamard(Tensor([1.0, 2.0, 3.0]), Tensor([2.0, 0.0, -1.0]))
    np.testing.assert_array_equal(out.data, [2.0, 0.0, -3.0])


def test_add_incompatible_shapes():
    with pytest.raises(ShapeError):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_trailing_axis_broadcast_gradient():
    x = Tensor(np.ones((4, 3)), requires_grad=True)
    bias = Tensor(np.zeros(3), requires_grad=True)
    ad.reduce_sum(x + bias).backward()
    np.testing.assert_array_equal(bias.grad, [4.0, 4.0, 4.0])


def test_concat_shape_arithmetic():
    out = ad.concat([Tensor(np.zeros((5, 3))), Tensor(np.ones((5, 5)))], axis=-1)
    assert out.shape == (5, 8)


def test_concat_single_tensor_is_identity():
    t = Tensor([[1.0, 2.0]])
    np.testing.assert_array_equal(ad.concat([t], axis=0).data, t.data)


def test_concat_mismatch():
    with pytest.raises(ShapeError):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=-1)


def test_concat_then_split_roundtrips_bit_exact():
    rng = np.random.default_rng(0)
    parts = [rng.uniform(-1, 1, (4, w)) for w in (2, 5, 1)]
    joined = ad.concat([Tensor(p) for p in parts], axis=1)
    back = ad.split(joined, [2, 5, 1], axis=1)
    for original, piece in zip(parts, back):
        assert np.array_equal(original, piece.data)


def test_reduce_examples():
    assert float(ad.reduce_mean(Tensor([1.0, 2.0, 3.0])).data) == 2.0
    assert float(ad.reduce_sum(Tensor(np.zeros(7))).data) == 0.0
    np.testing.assert_array_equal(
        ad.reduce_sum(Tensor([[1.0, 2.0], [3.0, 4.0]]), axis=0).data, [4.0, 6.0])


def test_reduce_axis_out_of_range():
    with pytest.raises(ShapeError):
        ad.reduce_sum(Tensor([[1.0]]), axis=5)


def test_backward_sigmoid_derivative_at_zero():
    x = Tensor(0.0, requires_grad=True)
    ad.sigmoid(x).backward()
    assert float(x.grad) == pytest.approx(0.25)


def test_backward_product_rule():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(3.0, requires_grad=True)
    (x * y).backward()
    assert float(x.grad) == 3.0
    assert float(y.grad) == 2.0


def test_backward_requires_scalar():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (t * t).backward()


def test_backward_ignored_leaf_gets_exact_zero():
    used = Tensor([1.0], requires_grad=True)
    ignored = Tensor([5.0], requires_grad=True)
    ad.reduce_sum(used * used).backward()
    np.testing.assert_array_equal(ad.grad_or_zero(ignored), [0.0])
    assert ignored.grad is None


def test_backward_visits_shared_node_once():
    # y = x + x: gradient must accumulate to exactly 2, not 1 or 4.
    x = Tensor(3.0, requires_grad=True)
    (x + x).backward()
    assert float(x.grad) == 2.0


def test_nonfinite_forward_raises():
    with np.errstate(over="ignore"), pytest.raises(FiniteError):
        ad.hadamard(Tensor([1e308]), Tensor([1e308]))  # overflows to inf


def test_tensor_construction_rejects_nan():
    with pytest.raises(FiniteError):
        Tensor([float("nan")])


def test_grad_check_linear_is_tight():
    w = Tensor([[0.5, -1.0], [2.0, 0.25]], requires_grad=True)
    x = Tensor([[1.0], [2.0]])

    def f():
        return ad.reduce_sum(ad.matmul(w, x))

    assert ad.grad_check(f, [w], epsilon=1e-6) < 1e-8


def test_grad_check_sigmoid_chain():
    rng = np.random.default_rng(3)
    w1 = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(3, 1)), requires_grad=True)
    x = Tensor(rng.normal(size=(2, 3)))

    def f():
        return ad.reduce_mean(ad.matmul(ad.sigmoid(ad.matmul(x, w1)), w2))

    assert ad.grad_check(f, [w1, w2], epsilon=1e-5) < 1e-4


def test_grad_check_constant_function():
    p = Tensor([1.0, 2.0], requires_grad=True)

    def f():
        return ad.reduce_sum(Tensor([0.0]) * p) + Tensor(7.0)

    assert ad.grad_check(f, [p]) == 0.0


def test_adam_zero_gradient_leaves_params_unchanged():
    p = Tensor([1.0, -2.0], requires_grad=True)
    state = AdamState.for_params([p])
    ad.adam_step(state, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_learning_rate():
    # Bias correction makes the first update lr * g / (|g| + eps') ~ lr.
    for g in (0.01, 1.0, 250.0):
        p = Tensor([0.0], requires_grad=True)
        state = AdamState.for_params([p], lr=1e-3)
        ad.adam_step(state, [p], [np.array([g])])
        assert abs(p.data[0]) == pytest.approx(1e-3, rel=1e-4)
        assert p.data[0] < 0  # moves against the gradient


def test_adam_descends_scalar_quadratic():
    # loss(w) = (w - 3)^2, two identical-procedure steps must reduce it
    p = Tensor([0.0], requires_grad=True)
    state = AdamState.for_params([p], lr=0.1)

    def loss_value():
        return float((p.data[0] - 3.0) ** 2)

    first = loss_value()
    for _ in range(2):
        grad = np.array([2.0 * (p.data[0] - 3.0)])
        ad.adam_step(state, [p], [grad])
    assert loss_value() < first


def test_adam_shape_mismatch():
    p = Tensor([1.0, 2.0], requires_grad=True)
    state = AdamState.for_params([p])
    with pytest.raises(ShapeError):
        ad.adam_step(state, [p], [np.zeros(3)])


def test_reshape_roundtrip_gradient():
    t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.reduce_sum(ad.reshape(t, (3, 2)) * Tensor(np.ones((3, 2)) * 2)).backward()
    np.testing.assert_array_equal(t.grad, np.full((2, 3), 2.0))


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
       st.integers(min_value=0, max_value=2**32 - 1))
def test_concat_split_roundtrip_property(widths, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(size=(3, w)) for w in widths]
    joined = ad.concat([Tensor(p) for p in parts], axis=-1)
    assert joined.shape == (3, sum(widths))
    for original, piece in zip(parts, ad.split(joined, widths, axis=-1)):
        assert np.array_equal(original, piece.data)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_composite_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(scale=0.5, size=(4, 4)), requires_grad=True)
    b = Tensor(rng.normal(scale=0.1, size=(4,)), requires_grad=True)
    x = Tensor(rng.normal(size=(3, 4)))

    def f():
        hidden = ad.tanh(ad.matmul(x, w) + b)
        gate = ad.sigmoid(ad.matmul(hidden, w))
        return ad.reduce_mean(gate * hidden + ad.relu(hidden))

    assert ad.grad_check(f, [w, b], epsilon=1e-5) < 1e-4
