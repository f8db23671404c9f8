"""Tape autodiff: forward values, gradient rules, modes and error paths."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mdst import tensor as tn
from mdst.errors import DimensionError, NumericDomainError


def finite_floats(lo=-3.0, hi=3.0):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


def small_matrix(rows, cols):
    return arrays(np.float64, (rows, cols), elements=finite_floats())


class TestForward:
    def test_matmul_identity(self):
        out = tn.matmul(np.eye(2), np.array([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_matmul_row_by_column(self):
        out = tn.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            tn.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_sigmoid_and_exp_at_zero(self):
        assert tn.sigmoid(np.array(0.0)).item() == 0.5
        assert tn.exp(np.array(0.0)).item() == 1.0

    def test_mean_pool(self):
        assert tn.mean_pool(np.array([2.0, 4.0, 6.0]), axis=0).item() == 4.0

    def test_mean_pool_empty_axis(self):
        with pytest.raises(DimensionError):
            tn.mean_pool(np.zeros((0, 3)), axis=0)

    def test_layer_norm_constant_vector(self):
        out = tn.layer_norm(np.full((1, 5), 7.0))
        np.testing.assert_array_equal(out.data, np.zeros((1, 5)))

    def test_log_clamps_non_positive_arguments(self):
        out = tn.log(np.array([1.0, 0.0, -2.0]))
        np.testing.assert_array_equal(out.data, [0.0, np.log(1e-8), np.log(1e-8)])

    def test_log_of_nan_raises(self):
        with pytest.raises(NumericDomainError):
            tn.log(np.array([np.nan]))

    def test_heaviside_inclusive_step(self):
        out = tn.heaviside(np.array([-0.1, 0.0, 0.2]))
        np.testing.assert_array_equal(out.data, [0.0, 1.0, 1.0])

    def test_dropout_scaling_and_eval_identity(self):
        rng = np.random.default_rng(0)
        x = np.ones((200, 50))
        out = tn.dropout(x, 0.2, rng, training=True).data
        assert set(np.unique(out)) <= {0.0, 1.25}
        np.testing.assert_array_equal(tn.dropout(x, 0.2, rng, training=False).data, x)


class TestGradients:
    def test_quadratic(self):
        w = tn.parameter(np.array([1.0, 2.0]))
        with tn.GradTape() as tape:
            tape.backward(tn.sum_(tn.square(w)))
        np.testing.assert_allclose(w.grad, [2.0, 4.0], rtol=1e-12)
        rep = tn.check_gradients(lambda: tn.sum_(tn.square(w)), {"w": w})
        assert rep.max_error < 1e-8

    def test_matmul_against_central_difference(self):
        rng = np.random.default_rng(3)
        a, b = tn.parameter(rng.normal(size=(3, 3))), tn.parameter(rng.normal(size=(3, 3)))
        rep = tn.check_gradients(lambda: tn.sum_(tn.matmul(a, b)), {"a": a, "b": b}, h=1e-5)
        assert rep.max_error < 1e-6

    def test_sigmoid_gradient_at_one_point_five(self):
        x = tn.parameter(np.array([1.5]))
        rep = tn.check_gradients(lambda: tn.sum_(tn.sigmoid(x)), {"x": x})
        assert rep.max_error < 1e-6

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(4)
        x = tn.parameter(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        rep = tn.check_gradients(lambda: tn.sum_(tn.mul(tn.layer_norm(x), w)), {"x": x})
        assert rep.max_error < 1e-5

    def test_heaviside_backward_at_zero(self):
        x = tn.parameter(np.array([0.0]))
        with tn.GradTape() as tape:
            tape.backward(tn.sum_(tn.heaviside(x, alpha=4.0)))
        assert x.grad[0] == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(-2.0, 2.0))
    @settings(max_examples=30, deadline=None)
    def test_heaviside_backward_matches_surrogate_difference(self, v):
        x = tn.parameter(np.array([v]))
        with tn.GradTape() as tape:
            tape.backward(tn.sum_(tn.heaviside(x)))
        h = 1e-6
        sig = lambda z: 1.0 / (1.0 + np.exp(-4.0 * z))
        numeric = (sig(v + h) - sig(v - h)) / (2 * h)
        assert tn.relative_error(x.grad, np.array([numeric])) < 1e-5

    def test_constant_inputs_never_accumulate(self):
        const = tn.Tensor(np.ones(3))
        w = tn.parameter(np.ones(3))
        with tn.GradTape() as tape:
            tape.backward(tn.sum_(tn.mul(const, w)))
        assert const.grad is None
        np.testing.assert_array_equal(w.grad, np.ones(3))

    def test_no_grad_records_nothing(self):
        w = tn.parameter(np.ones(2))
        with tn.GradTape() as tape, tn.no_grad():
            y = tn.sum_(tn.square(w))
        assert not tape.nodes
        assert y.item() == 2.0

    def test_non_finite_loss_rejected(self):
        w = tn.parameter(np.array([np.inf]))
        with pytest.raises(NumericDomainError):
            tn.check_gradients(lambda: tn.sum_(w), {"w": w})


class TestProperties:
    @given(small_matrix(4, 4), small_matrix(4, 4))
    @settings(max_examples=25, deadline=None)
    def test_elementwise_chain_gradients(self, a, b):
        x, y = tn.parameter(a.copy()), tn.parameter(b.copy())

        def f():
            return tn.sum_(tn.mul(tn.sigmoid(x), tn.exp(tn.scale(y, 0.3))))
        assert tn.check_gradients(f, {"x": x, "y": y}).max_error < 1e-4

    @given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matmul_by_identity_is_exact(self, n, m, seed):
        a = np.random.default_rng(seed).normal(size=(n, m))
        np.testing.assert_array_equal(tn.matmul(a, np.eye(m)).data, a)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_replay_is_bit_deterministic(self, seed):
        def grads():
            rng = np.random.default_rng(seed)
            w = tn.parameter(rng.normal(size=(5, 3)))
            x = rng.normal(size=(4, 5))
            with tn.GradTape() as tape:
                tape.backward(tn.sum_(tn.softmax(tn.matmul(x, w))))
            return w.grad
        np.testing.assert_array_equal(grads(), grads())

    @given(small_matrix(3, 5))
    @settings(max_examples=25, deadline=None)
    def test_outputs_stay_finite(self, a):
        out = tn.softmax(tn.layer_norm(a))
        assert np.isfinite(out.data).all()
