import numpy as np
import pytest

from changekit import tensor as tk
from changekit.tensor import DomainError, ShapeError, Tensor, grad_check


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestElementwise:
    def test_abs_of_difference(self):
        # |[3, -1] - [1, 2]| = [2, 3]
        out = tk.abs_(tk.sub(t64([3.0, -1.0]), t64([1.0, 2.0])))
        np.testing.assert_array_equal(out.numpy(), [2.0, 3.0])

    def test_additive_identity(self):
        x = t64([[1.5, -2.0], [0.25, 4.0]])
        out = tk.add(x, tk.zeros_like(x))
        np.testing.assert_array_equal(out.numpy(), x.numpy())

    def test_abs_self_difference_is_zero(self):
        x = t64([0.3, -7.0, 2.0])
        out = tk.abs_(tk.sub(x, x))
        np.testing.assert_array_equal(out.numpy(), np.zeros(3))

    def test_broadcast_trailing(self):
        a = t64(np.ones((2, 3)))
        b = t64([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(tk.add(a, b).numpy(), [[2, 3, 4], [2, 3, 4]])

    def test_non_broadcastable_rejected_with_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
            tk.add(t64(np.ones((2, 3))), t64(np.ones(2)))

    def test_div_by_zero_is_hard_error(self):
        with pytest.raises(DomainError):
            tk.div(t64([1.0]), t64([0.0]))

    def test_log_of_nonpositive_rejected(self):
        with pytest.raises(DomainError):
            tk.log(t64([1.0, 0.0]))
        with pytest.raises(DomainError):
            tk.log(t64([-1.0]))

    def test_sqrt_of_negative_rejected(self):
        with pytest.raises(DomainError):
            tk.sqrt(t64([-0.5]))

    def test_mixed_precision_rejected(self):
        a = Tensor([1.0], dtype=np.float32)
        b = Tensor([1.0], dtype=np.float64)
        with pytest.raises(TypeError):
            tk.add(a, b)

    def test_dispatcher(self):
        x = t64([-2.0, 3.0])
        np.testing.assert_array_equal(tk.elementwise("abs", x).numpy(), [2.0, 3.0])
        np.testing.assert_array_equal(
            tk.elementwise("clamp", x, lo=0.0).numpy(), [0.0, 3.0]
        )
        with pytest.raises(ValueError):
            tk.elementwise("nope", x)


class TestMatmul:
    def test_identity(self):
        eye = t64(np.eye(2))
        m = t64([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tk.matmul(eye, m).numpy(), m.numpy())

    def test_orthonormal_rows(self):
        m = t64([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(tk.matmul(m, m.T).numpy(), np.eye(2))

    def test_hand_product(self):
        out = tk.matmul(t64([[1.0, 2.0]]), t64([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.numpy(), [[11.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            tk.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


class TestReduce:
    def test_sum_all(self):
        assert tk.reduce_sum(t64([[1.0, 2.0], [3.0, 4.0]])).item() == 10.0

    def test_mean_of_constant(self):
        assert tk.reduce_mean(t64(np.full((3, 4), 2.5))).item() == 2.5

    def test_max(self):
        assert tk.reduce_max(t64([-1.0, 5.0, 2.0])).item() == 5.0

    def test_invalid_axis(self):
        with pytest.raises(ValueError):
            tk.reduce_sum(t64([1.0, 2.0]), axes=(1,))

    def test_repeated_axis(self):
        with pytest.raises(ValueError):
            tk.reduce_sum(t64(np.ones((2, 2))), axes=(0, 0))

    def test_axis_subset(self):
        x = t64(np.arange(6.0).reshape(2, 3))
        np.testing.assert_array_equal(tk.reduce_sum(x, axes=(0,)).numpy(), [3.0, 5.0, 7.0])

    def test_dispatcher(self):
        x = t64([1.0, 2.0, 3.0])
        assert tk.reduce(x, None, "mean").item() == 2.0


class TestSoftmax:
    def test_uniform_from_equal_logits(self):
        out = tk.softmax(t64([0.0, 0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.numpy(), np.full(4, 0.25))

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 5))
        a = tk.softmax(t64(x), axis=1).numpy()
        b = tk.softmax(t64(x + 123.4), axis=1).numpy()
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_hand_value(self):
        out = tk.softmax(t64([np.log(1.0), np.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.numpy(), [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(7)
        x = rng.normal(scale=30, size=(8, 6))
        out = tk.softmax(t64(x), axis=1).numpy()
        np.testing.assert_allclose(out.sum(axis=1), np.ones(8), atol=1e-6)
        assert (out > 0).all()


class TestConv2d:
    def test_identity_kernel(self):
        x = t64(np.random.default_rng(1).normal(size=(2, 3, 5, 5)))
        k = np.zeros((3, 3, 1, 1))
        for c in range(3):
            k[c, c, 0, 0] = 1.0
        out = tk.conv2d(x, t64(k))
        np.testing.assert_allclose(out.numpy(), x.numpy(), atol=1e-12)

    def test_zero_kernel(self):
        x = t64(np.ones((1, 2, 4, 4)))
        out = tk.conv2d(x, t64(np.zeros((3, 2, 3, 3))), padding=1)
        np.testing.assert_array_equal(out.numpy(), np.zeros((1, 3, 4, 4)))

    def test_ones_summation(self):
        x = t64(np.ones((1, 1, 3, 3)))
        out = tk.conv2d(x, t64(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.numpy(), [[[[9.0]]]])

    def test_output_shape_formula(self):
        x = t64(np.zeros((1, 1, 11, 9)))
        out = tk.conv2d(x, t64(np.zeros((4, 1, 3, 3))), stride=2, padding=1)
        assert out.shape == (1, 4, 6, 5)

    def test_same_padding_preserves_shape(self):
        x = t64(np.zeros((2, 3, 8, 8)))
        out = tk.conv2d(x, t64(np.zeros((5, 3, 3, 3))), stride=1, padding=1)
        assert out.shape == (2, 5, 8, 8)

    def test_kernel_larger_than_padded_input_rejected(self):
        with pytest.raises(ShapeError):
            tk.conv2d(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 5, 5))), padding=1)


class TestSpatial:
    def test_avg_pool_constant(self):
        x = t64(np.full((1, 2, 4, 4), 3.0))
        np.testing.assert_array_equal(tk.avg_pool2d(x, 2).numpy(), np.full((1, 2, 2, 2), 3.0))

    def test_avg_pool_indivisible(self):
        with pytest.raises(ShapeError):
            tk.avg_pool2d(t64(np.zeros((1, 1, 5, 4))), 2)

    def test_upsample_constant_preserved(self):
        x = t64(np.full((1, 1, 3, 3), 1.25))
        out = tk.bilinear_upsample(x, 9, 9)
        np.testing.assert_allclose(out.numpy(), np.full((1, 1, 9, 9), 1.25), atol=1e-12)

    def test_upsample_shape(self):
        out = tk.bilinear_upsample(t64(np.zeros((2, 4, 4, 4))), 32, 32)
        assert out.shape == (2, 4, 32, 32)

    def test_interp_matrix_rows_stochastic(self):
        m = tk.bilinear_matrix(10, 4)
        np.testing.assert_allclose(m.sum(axis=1), np.ones(10), atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.random.default_rng(2).normal(size=(3, 4)), requires_grad=True)
        tk.reduce_sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_sum(self):
        x = t64([3.0], requires_grad=True)
        tk.reduce_sum(tk.square(x)).backward()
        np.testing.assert_array_equal(x.grad, [6.0])

    def test_abs_negative_branch(self):
        x = t64([-2.0], requires_grad=True)
        tk.reduce_sum(tk.abs_(x)).backward()
        np.testing.assert_array_equal(x.grad, [-1.0])

    def test_abs_subgradient_at_zero_is_zero(self):
        x = t64([0.0], requires_grad=True)
        tk.reduce_sum(tk.abs_(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        x = t64([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError):
            tk.square(x).backward()

    def test_double_use_doubles_gradient(self):
        x = t64([1.5, -0.5], requires_grad=True)
        tk.reduce_sum(tk.add(x, x)).backward()
        single = np.ones(2)
        np.testing.assert_array_equal(x.grad, 2.0 * single)

    def test_accumulation_across_calls(self):
        x = t64([2.0], requires_grad=True)
        tk.reduce_sum(x).backward()
        tk.reduce_sum(x).backward()
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_no_grad_context(self):
        x = t64([1.0], requires_grad=True)
        with tk.no_grad():
            y = tk.square(x)
        assert not y.requires_grad
        assert y._backward_fn is None

    def test_finite_after_forward_backward(self):
        rng = np.random.default_rng(3)
        x = t64(rng.normal(size=(2, 3, 8, 8)), requires_grad=True)
        w = t64(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        out = tk.conv2d(x, w, padding=1)
        loss = tk.reduce_mean(tk.square(out))
        loss.backward()
        assert np.isfinite(out.numpy()).all()
        assert np.isfinite(x.grad).all() and np.isfinite(w.grad).all()


def _offset_from_zero(rng, shape, lo=0.2, hi=1.0):
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return sign * rng.uniform(lo, hi, size=shape)


class TestGradCheck:
    def test_quadratic_tight(self):
        x = t64([1.0, 2.0, 3.0], requires_grad=True)
        err = grad_check(lambda a: tk.reduce_sum(tk.square(a)), [x], eps=1e-5)
        assert err < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_primitive_compositions(self, seed):
        rng = np.random.default_rng(seed)
        x = t64(_offset_from_zero(rng, (3, 4)), requires_grad=True)
        y = t64(_offset_from_zero(rng, (3, 4)), requires_grad=True)

        def f(a, b):
            z = tk.mul(tk.abs_(tk.sub(a, b)), a)
            z = tk.div(z, tk.add(tk.square(b), Tensor(np.ones((3, 4)), dtype=np.float64)))
            return tk.reduce_sum(tk.exp(tk.mul(z, Tensor(np.full((3, 4), 0.1), dtype=np.float64))))

        assert grad_check(f, [x, y], eps=1e-5) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_conv_matmul_softmax(self, seed):
        rng = np.random.default_rng(100 + seed)
        x = t64(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
        w = t64(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        m = t64(rng.normal(size=(3, 4)), requires_grad=True)

        def f(xx, ww, mm):
            h = tk.conv2d(xx, ww, stride=2, padding=1)
            p = tk.reduce_mean(h, axes=(2, 3))
            q = tk.matmul(p, mm)
            s = tk.softmax(q, axis=1)
            return tk.reduce_sum(tk.square(s))

        assert grad_check(f, [x, w, m], eps=1e-5) < 1e-4

    def test_log_sqrt_clamp(self):
        rng = np.random.default_rng(11)
        x = t64(rng.uniform(0.5, 2.0, size=(6,)), requires_grad=True)

        def f(a):
            return tk.reduce_sum(tk.log(tk.sqrt(a)) + tk.clamp(a, lo=0.6, hi=1.9) * a)

        # clamp boundaries avoided by sampling interior points only
        x.data[np.abs(x.data - 0.6) < 0.05] += 0.1
        x.data[np.abs(x.data - 1.9) < 0.05] -= 0.1
        assert grad_check(f, [x], eps=1e-5) < 1e-4

    def test_pool_upsample_concat(self):
        rng = np.random.default_rng(12)
        x = t64(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        y = t64(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)

        def f(a, b):
            u = tk.bilinear_upsample(tk.avg_pool2d(a, 2), 4, 4)
            c = tk.concat([u, b], axis=1)
            return tk.reduce_mean(tk.square(c))

        assert grad_check(f, [x, y], eps=1e-5) < 1e-4

    def test_sigmoid_reduce_max(self):
        rng = np.random.default_rng(13)
        x = t64(rng.normal(size=(4, 5)), requires_grad=True)

        def f(a):
            return tk.reduce_sum(tk.sigmoid(a)) + tk.reduce_sum(tk.reduce_max(a, axes=(1,)))

        assert grad_check(f, [x], eps=1e-5) < 1e-4

    def test_reports_failure_as_inf(self):
        x = t64([1.0], requires_grad=True)

        class Broken:
            calls = 0

        def f(a):
            out = tk.reduce_sum(tk.square(a))
            out.data = np.array(np.nan)
            return out

        assert grad_check(f, [x], eps=1e-5) == np.inf
