"""Autodiff engine: values, gradients, stop-gradient and tape contracts."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssia.tensor import (
    Tensor,
    backward,
    finite_diff_check,
    grad_of,
    no_grad,
    stop_gradient,
)


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


class TestElementwise:
    def test_square_gradient_at_3(self):
        x = t64([3.0])
        backward(x.square().sum())
        npt.assert_array_equal(x.grad, [6.0])

    def test_add_zeros_is_identity(self):
        a = t64(np.arange(6.0).reshape(2, 3))
        out = a + t64(np.zeros((2, 3)), requires_grad=False)
        npt.assert_array_equal(out.data, a.data)

    def test_mul_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        b = t64(rng.normal(size=(2, 3)), requires_grad=False)
        x = t64(rng.normal(size=(2, 3)))
        err = finite_diff_check(lambda t: (t * b).sum(), x, step=1e-5)
        assert err <= 1e-6

    def test_sub_div_square_sqrt_finite_differences(self):
        rng = np.random.default_rng(1)
        d = t64(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=False)
        x = t64(rng.uniform(0.5, 2.0, size=(3, 4)))
        for f in [
            lambda t: (t - d).square().sum(),
            lambda t: (t / d).sum(),
            lambda t: (d / t).sum(),
            lambda t: t.sqrt().sum(),
            lambda t: (t * 2.5 + 1.0 - 0.5).sum(),
        ]:
            assert finite_diff_check(f, x, step=1e-5) <= 1e-6

    def test_broadcast_gradients(self):
        # [2,3] * [1,3] and [2,1]: broadcast dims accumulate in the backward.
        x = t64(np.ones((2, 3)))
        y = t64(np.array([[1.0, 2.0, 3.0]]))
        backward((x * y).sum())
        npt.assert_array_equal(x.grad, np.broadcast_to(y.data, (2, 3)))
        npt.assert_array_equal(y.grad, [[2.0, 2.0, 2.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(3, 2\)"):
            _ = t64(np.zeros((2, 3))) + t64(np.zeros((3, 2)))

    def test_rank_mismatch_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            _ = t64(np.zeros((2, 3))) * t64(np.zeros(3))


class TestMatmul:
    def test_identity(self):
        a = t64(np.random.default_rng(2).normal(size=(3, 3)))
        out = a @ t64(np.eye(3), requires_grad=False)
        npt.assert_array_equal(out.data, a.data)

    def test_1x1_reduces_to_scalar_multiplication(self):
        out = t64([[3.0]]) @ t64([[4.0]])
        npt.assert_array_equal(out.data, [[12.0]])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        a = t64(rng.normal(size=(4, 5)))
        b = t64(rng.normal(size=(5, 3)))
        assert finite_diff_check(lambda t: (t @ b).square().sum(), a) <= 1e-6
        assert finite_diff_check(lambda t: (a @ t).square().sum(), b) <= 1e-6

    def test_inner_extent_mismatch(self):
        with pytest.raises(ValueError, match="inner"):
            _ = t64(np.zeros((2, 3))) @ t64(np.zeros((4, 2)))


class TestReductions:
    def test_sum_gradient_is_ones(self):
        x = t64(np.random.default_rng(4).normal(size=(2, 5)))
        backward(x.sum())
        npt.assert_array_equal(x.grad, np.ones((2, 5)))

    def test_axis_sum_and_mean_finite_differences(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(2, 3, 4)))
        for f in [
            lambda t: t.sum(axes=(1,)).square().sum(),
            lambda t: t.mean(axes=(0, 2), keepdims=True).square().sum(),
            lambda t: t.mean().square(),
        ]:
            assert finite_diff_check(f, x) <= 1e-6

    def test_reshape_roundtrips_gradient(self):
        x = t64(np.arange(6.0).reshape(2, 3))
        backward((x.reshape((3, 2)) * t64([[1.0, 2.0]] * 3, requires_grad=False)).sum())
        npt.assert_array_equal(x.grad, np.array([1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).reshape(2, 3))


class TestStopGradient:
    def test_values_pass_through_exactly(self):
        x = t64(np.random.default_rng(6).normal(size=(3, 3)))
        npt.assert_array_equal(stop_gradient(x).data, x.data)
        assert stop_gradient(x).requires_grad is False

    def test_detached_factor_gets_zero_gradient(self):
        x = t64([1.0, 2.0])
        y = t64([3.0, 4.0])
        backward((stop_gradient(x) * y).sum())
        npt.assert_array_equal(grad_of(y), x.data)
        npt.assert_array_equal(grad_of(x), [0.0, 0.0])

    def test_chain_isolates_inner_parameters(self):
        # loss = stop_gradient(g(f(x))) . h(f(x)); parameters used only in g
        # must get exactly zero, while f and h parameters get nonzero grads.
        rng = np.random.default_rng(7)
        x = t64(rng.normal(size=(2, 3)), requires_grad=False)
        wf = t64(rng.normal(size=(3, 3)))
        wg = t64(rng.normal(size=(3, 3)))
        wh = t64(rng.normal(size=(3, 3)))
        mid = x @ wf
        sig = stop_gradient(mid @ wg)
        backward((sig * (mid @ wh)).sum())
        npt.assert_array_equal(grad_of(wg), np.zeros((3, 3)))
        assert np.abs(grad_of(wf)).max() > 0
        assert np.abs(grad_of(wh)).max() > 0


class TestBackward:
    def test_constant_loss_leaves_grads_zero(self):
        x = t64([1.0, 2.0])
        backward(Tensor(np.float64(5.0)))
        npt.assert_array_equal(grad_of(x), [0.0, 0.0])

    def test_reuse_accumulates_both_paths(self):
        x = t64([2.0])
        backward((x * 3.0 + x.square()).sum())
        npt.assert_array_equal(x.grad, [3.0 + 4.0])

    def test_grads_accumulate_across_backward_calls(self):
        x = t64([1.0, -2.0])
        backward(x.square().sum())
        first = x.grad.copy()
        backward(x.square().sum())
        npt.assert_array_equal(x.grad, 2 * first)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(t64([1.0, 2.0]))

    def test_backward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(8)
        data = [rng.normal(size=(4, 4)) for _ in range(3)]

        def run():
            a, b, c = (t64(d.copy()) for d in data)
            backward((((a @ b) * c) + a.square()).mean())
            return [t.grad.copy() for t in (a, b, c)]

        for g1, g2 in zip(run(), run()):
            npt.assert_array_equal(g1, g2)

    def test_no_grad_suppresses_recording(self):
        x = t64([1.0])
        with no_grad():
            y = x.square()
        assert y.requires_grad is False
        assert y._grad_fn is None


class TestFiniteDiffCheck:
    def test_sum_has_near_zero_error(self):
        x = t64(np.random.default_rng(9).normal(size=(3, 3)))
        assert finite_diff_check(lambda t: t.sum(), x) <= 1e-10

    def test_sum_of_squares(self):
        x = t64(np.random.default_rng(10).normal(size=(4, 4)))
        assert finite_diff_check(lambda t: t.square().sum(), x, step=1e-5) <= 1e-7

    def test_rejects_float32(self):
        x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(ValueError, match="float64"):
            finite_diff_check(lambda t: t.sum(), x)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8),
    st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=8),
)
def test_upstream_of_stop_gradient_always_zero(xs, ys):
    # Any graph reaching the loss only through stop_gradient deposits nothing.
    n = min(len(xs), len(ys))
    x = t64(xs[:n])
    y = t64(ys[:n])
    backward((stop_gradient(x.square() + x * 2.0) * y).sum())
    npt.assert_array_equal(grad_of(x), np.zeros(n))
