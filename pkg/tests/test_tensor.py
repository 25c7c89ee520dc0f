"""Autodiff core: op values against hand results and naive loops, gradients against central differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stn.tensor import (
    DomainError,
    ShapeError,
    Tensor,
    backward,
    conv2d,
    cross_entropy,
    elementwise,
    exp,
    get_tape,
    grad_check,
    log,
    matmul,
    no_grad,
    reduce,
    relu,
    reshape,
    sigmoid,
    square,
    stack_columns,
    take,
    tanh,
    transpose,
)


def leaf(rng, *shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def naive_conv(x, w, stride=1, padding=0):
    B, C, H, W = x.shape
    O, _, K, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - K) // stride + 1
    Wo = (W + 2 * padding - K) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(Ho):
                for j in range(Wo):
                    for c in range(C):
                        for p in range(K):
                            for q in range(K):
                                out[b, o, i, j] += xp[b, c, i * stride + p, j * stride + q] * w[o, c, p, q]
    return out


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    def test_mul_broadcast(self):
        out = elementwise("mul", Tensor([1.0, 2.0, 3.0]), Tensor([2.0, 2.0, 2.0]))
        np.testing.assert_array_equal(out.data, [2.0, 4.0, 6.0])

    def test_exp_log_inverse(self):
        x = np.array([0.5, 1.5])
        np.testing.assert_allclose(exp(log(Tensor(x))).data, x, atol=1e-12)

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            log(Tensor([1.0, 0.0]))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(4))

    def test_sigmoid_saturates_without_overflow(self):
        with np.errstate(all="raise"):
            out = sigmoid(Tensor([-800.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    @pytest.mark.parametrize("op", ["exp", "sigmoid", "relu", "square", "neg", "tanh"])
    def test_unary_gradients(self, op):
        rng = np.random.default_rng(1)
        x = leaf(rng, 3, 4)
        if op == "relu":
            x.data[np.abs(x.data) < 1e-3] = 0.5  # stay off the kink
        assert grad_check(lambda: elementwise(op, x).sum(), [x]) <= 1e-5

    def test_log_gradient(self):
        x = leaf(np.random.default_rng(2), 5, lo=0.2, hi=2.0)
        assert grad_check(lambda: log(x).sum(), [x]) <= 1e-5

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
    def test_binary_broadcast_gradients(self, op):
        rng = np.random.default_rng(3)
        a = leaf(rng, 4, 3)
        b = leaf(rng, 3, lo=0.5, hi=2.0)
        c = leaf(rng, 4, 1, lo=0.5, hi=2.0)
        err = grad_check(lambda: square(elementwise(op, elementwise(op, a, b), c)).sum(), [a, b, c])
        assert err <= 1e-5
        # gradient shapes equal leaf shapes after reduce-summing broadcast axes
        assert b.grad.shape == (3,) and c.grad.shape == (4, 1)


class TestMatmul:
    def test_identity(self):
        np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]])).data, [[3.0], [4.0]])

    def test_hand_expansion(self):
        assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
        assert grad_check(lambda: tanh(a @ b).sum(), [a, b]) <= 1e-5


class TestReduce:
    def test_sum(self):
        assert reduce("sum", Tensor([1.0, 2.0, 3.0])).item() == 6.0

    def test_mean_axis(self):
        np.testing.assert_array_equal(reduce("mean", Tensor([[1.0, 3.0], [5.0, 7.0]]), 0).data, [3.0, 5.0])

    def test_sum_backward_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_invalid_axis(self):
        with pytest.raises(ValueError, match="axis"):
            reduce("sum", Tensor(np.ones((2, 2))), 2)

    @pytest.mark.parametrize("axes", [None, 0, 1, (0, 2), -1])
    def test_gradients(self, axes):
        x = leaf(np.random.default_rng(5), 2, 3, 4)
        assert grad_check(lambda: square(reduce("mean", x, axes)).sum(), [x]) <= 1e-5
        assert grad_check(lambda: square(reduce("sum", x, axes)).sum(), [x]) <= 1e-5


class TestStructuralOps:
    def test_reshape_transpose_take_stack(self):
        rng = np.random.default_rng(6)
        x = leaf(rng, 3, 4)
        idx = np.array([0, 2, 2, 1])
        err = grad_check(lambda: square(take(reshape(transpose(x), (2, 6)), (slice(None), idx))).sum(), [x])
        assert err <= 1e-5
        cols = [leaf(rng, 5) for _ in range(3)]
        assert grad_check(lambda: sigmoid(stack_columns(cols)).sum(), cols) <= 1e-5

    def test_cross_entropy_value_and_gradient(self):
        rng = np.random.default_rng(7)
        z = leaf(rng, 6, 3)
        y = rng.integers(0, 3, size=6)
        p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
        expected = -np.mean(np.log(p[np.arange(6), y]))
        np.testing.assert_allclose(cross_entropy(z, y).item(), expected, rtol=1e-12)
        assert grad_check(lambda: cross_entropy(z, y), [z]) <= 1e-5


class TestConv2d:
    def test_against_naive_loop(self):
        rng = np.random.default_rng(8)
        x, w = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
        for stride, padding in [(1, 0), (1, 1), (2, 1)]:
            np.testing.assert_allclose(conv2d(Tensor(x), Tensor(w), stride, padding).data,
                                       naive_conv(x, w, stride, padding), atol=1e-10)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        x, w = leaf(rng, 2, 2, 5, 5), leaf(rng, 3, 2, 3, 3)
        assert grad_check(lambda: square(conv2d(x, w, stride=2, padding=1)).sum(), [x, w]) <= 1e-5

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError, match="larger"):
            conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))), padding=1)


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        backward(square(x))
        assert x.grad == 6.0

    def test_sigmoid_at_zero(self):
        x = Tensor(0.0, requires_grad=True)
        backward(sigmoid(x))
        assert x.grad == 0.25

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * 2.0)

    def test_fan_out_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        backward(x * x + 3.0 * x)
        assert x.grad == 7.0

    def test_only_requires_grad_leaves_get_gradients(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0])
        backward((a * b).sum())
        np.testing.assert_array_equal(a.grad, [3.0, 4.0])
        assert b.grad is None

    def test_tape_cleared_and_ordered(self):
        x = Tensor(1.0, requires_grad=True)
        y = exp(x)
        z = square(y)
        tape = get_tape()
        assert [n.output for n in tape.nodes[-2:]] == [y, z]
        backward(z)
        assert tape.nodes == []

    def test_no_grad_records_nothing(self):
        x = Tensor(1.0, requires_grad=True)
        with no_grad():
            y = exp(x) * 2.0
        assert not y.requires_grad and get_tape().nodes == []

    def test_repeated_passes_bitwise_identical(self):
        def run():
            rng = np.random.default_rng(11)
            a, b = leaf(rng, 4, 3), leaf(rng, 3, 2)
            backward(sigmoid(a @ b).mean())
            return a.grad, b.grad
        g1, g2 = run(), run()
        assert all(np.array_equal(u, v) for u, v in zip(g1, g2))

    def test_composite_graph_against_finite_differences(self):
        rng = np.random.default_rng(12)
        x, w, b = leaf(rng, 5, 3), leaf(rng, 3, 4), leaf(rng, 4)
        y = rng.integers(0, 4, size=5)

        def loss():
            h = tanh(x @ w + b)
            return cross_entropy(h * sigmoid(h), y) + 0.1 * square(w).sum()

        assert grad_check(loss, [x, w, b]) <= 1e-5


class TestGradCheck:
    def test_quadratic_form(self):
        rng = np.random.default_rng(13)
        M = rng.normal(size=(4, 4))
        x = leaf(rng, 4, 1)
        assert grad_check(lambda: (transpose(x) @ Tensor(M) @ x).sum(), [x]) <= 1e-7

    def test_constant_function(self):
        x = leaf(np.random.default_rng(14), 3)
        assert grad_check(lambda: Tensor(5.0) + 0.0 * x.sum(), [x]) == 0.0


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_broadcast_gradient_shapes_match_leaves(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng, rows, cols)
    b = leaf(rng, cols)
    c = leaf(rng, rows, 1)
    backward(((a * b) + c).sum())
    assert a.grad.shape == a.shape and b.grad.shape == b.shape and c.grad.shape == c.shape
    np.testing.assert_allclose(b.grad, a.data.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(c.grad, np.full((rows, 1), cols), atol=1e-12)
