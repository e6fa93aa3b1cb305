import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bimm import tensor as T
from bimm.errors import ContractError, NumericError, ShapeError
from bimm.gradcheck import finite_diff_grad, relative_error
from bimm.params import ParamStore
from bimm.tensor import Tensor


def assert_gradcheck(test: unittest.TestCase, fn, *inputs: np.ndarray, tol: float = 1e-5, seed: int = 0) -> None:
    """Compare backward() with central differences of ``sum(fn(*x) * W)`` in 64-bit."""
    with T.precision(np.float64):
        store = ParamStore((f"x{i}", Tensor(a, requires_grad=True)) for i, a in enumerate(inputs))
        probe = np.random.default_rng(seed).standard_normal(fn(*store.values()).shape)

        def loss(s: ParamStore) -> Tensor:
            return T.sum(T.mul(fn(*s.values()), probe))

        T.backward(loss(store), store)
        numeric = finite_diff_grad(lambda s: loss(s).item(), store, 1e-6)
        for name, tensor in store.items():
            errs = [relative_error(a, n) for a, n in zip(tensor.grad.ravel(), numeric[name].ravel())]
            test.assertLess(max(errs), tol, name)


class MatmulTests(unittest.TestCase):
    def test_identity(self):
        out = T.matmul(np.eye(2), np.array([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [4.0]])

    def test_hand_arithmetic(self):
        out = T.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        self.assertEqual(out.item(), 11.0)

    def test_inner_extent_mismatch(self):
        with self.assertRaises(ShapeError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_batched_leading_dims_broadcast(self):
        out = T.matmul(np.ones((4, 2, 3)), np.ones((3, 5)))
        self.assertEqual(out.shape, (4, 2, 5))

    def test_gradient_matches_finite_differences(self):
        r = np.random.default_rng(1)
        assert_gradcheck(self, T.matmul, r.standard_normal((3, 4)), r.standard_normal((4, 2)))


class LayerNormTests(unittest.TestCase):
    def test_constant_row_maps_to_zero(self):
        out = T.layer_norm(np.ones((1, 3)), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_symmetry(self):
        with T.precision(np.float64):
            out = T.layer_norm(np.array([[0.0, 2.0]]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_gamma_shape_checked(self):
        with self.assertRaises(ShapeError):
            T.layer_norm(np.ones((2, 4)), np.ones(3), np.zeros(4))

    def test_gradient_matches_finite_differences(self):
        r = np.random.default_rng(2)
        assert_gradcheck(
            self,
            lambda x, g, b: T.layer_norm(x, g, b),
            r.standard_normal((2, 8)), 1.0 + 0.1 * r.standard_normal(8), 0.1 * r.standard_normal(8),
        )

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
    def test_pre_affine_rows_have_zero_mean(self, x):
        with T.precision(np.float64):
            out = T.layer_norm(x, np.ones(6), np.zeros(6))
        self.assertLess(np.abs(out.data.mean(axis=-1)).max(), 1e-6)


class SoftmaxTests(unittest.TestCase):
    def test_symmetric_input(self):
        np.testing.assert_allclose(T.softmax(np.zeros((1, 2))).data, [[0.5, 0.5]])

    def test_constant_row(self):
        for c in (-1000.0, 0.0, 3.5, 1000.0):
            np.testing.assert_allclose(T.softmax(np.full((1, 3), c)).data, [[1 / 3] * 3], rtol=1e-6)

    def test_gradient_matches_finite_differences(self):
        assert_gradcheck(self, T.softmax, np.random.default_rng(3).standard_normal((3, 5)))

    @settings(max_examples=40, deadline=None)
    @given(
        arrays(np.float64, (4, 7), elements=st.floats(-30, 30)),
        st.floats(-100, 100),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        with T.precision(np.float64):
            y = T.softmax(x).data
            shifted = T.softmax(x + c).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(y, shifted, atol=1e-9)


class GeluTests(unittest.TestCase):
    def test_zero(self):
        self.assertEqual(T.gelu(np.zeros(1)).data[0], 0.0)

    def test_asymptotes(self):
        with T.precision(np.float64):
            out = T.gelu(np.array([10.0, -10.0])).data
        self.assertAlmostEqual(out[0], 10.0, places=6)
        self.assertAlmostEqual(out[1], 0.0, places=6)

    def test_gradient_matches_finite_differences(self):
        assert_gradcheck(self, T.gelu, np.random.default_rng(4).standard_normal(9))


class ReductionAndShapeGradTests(unittest.TestCase):
    def test_mean_over_axis(self):
        assert_gradcheck(self, lambda x: T.mean(x, axis=1), np.random.default_rng(5).standard_normal((3, 4)))

    def test_broadcast_add_and_mul(self):
        r = np.random.default_rng(6)
        assert_gradcheck(self, lambda a, b: (a + b) * a, r.standard_normal((2, 3)), r.standard_normal(3))

    def test_division(self):
        r = np.random.default_rng(7)
        assert_gradcheck(self, T.div, r.standard_normal((2, 3)), 2.0 + r.random((2, 3)))

    def test_concat_and_gather_rows(self):
        r = np.random.default_rng(8)
        idx = np.array([[2, 0], [1, 1]])
        assert_gradcheck(
            self,
            lambda a, b: T.gather_rows(T.concat([a, b], axis=1), idx),
            r.standard_normal((2, 2, 3)), r.standard_normal((2, 1, 3)),
        )

    def test_transpose_and_reshape(self):
        assert_gradcheck(
            self,
            lambda x: T.reshape(T.transpose(x, (1, 0, 2)), (3, 8)),
            np.random.default_rng(9).standard_normal((2, 3, 4)),
        )

    def test_mse_and_cross_entropy_are_scalars(self):
        with T.precision(np.float64):
            logits = Tensor(np.random.default_rng(10).standard_normal((4, 3)), requires_grad=True)
            ce = T.cross_entropy(logits, np.array([0, 1, 2, 1]))
            self.assertEqual(ce.shape, ())
            mse = T.mse_loss(logits, np.zeros((4, 3)))
            self.assertAlmostEqual(mse.item(), float((logits.data ** 2).mean()))

    def test_mse_on_empty_selection_is_zero(self):
        self.assertEqual(T.mse_loss(np.zeros((0, 3)), np.zeros((0, 3))).item(), 0.0)


class BackwardTests(unittest.TestCase):
    def test_sum_gives_ones(self):
        w = Tensor(np.zeros(3), requires_grad=True)
        T.backward(T.sum(w))
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        T.backward(T.sum(w * w))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_two_backward_calls_double_the_gradient(self):
        with T.precision(np.float64):
            w = Tensor(np.random.default_rng(11).standard_normal(5), requires_grad=True)
            T.backward(T.sum(T.gelu(w)))
            once = w.grad.copy()
            T.backward(T.sum(T.gelu(w)))
        np.testing.assert_array_equal(w.grad, 2.0 * once)

    def test_additive_across_loss_terms(self):
        with T.precision(np.float64):
            w = Tensor(np.random.default_rng(12).standard_normal(4), requires_grad=True)
            T.backward(T.sum(w * w))
            g1 = w.grad.copy()
            w.zero_grad()
            T.backward(T.sum(T.gelu(w)))
            g2 = w.grad.copy()
            w.zero_grad()
            T.backward(T.sum(w * w) + T.sum(T.gelu(w)))
        np.testing.assert_allclose(w.grad, g1 + g2, rtol=0, atol=1e-12)

    def test_non_scalar_loss_is_a_contract_error(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(ContractError):
            T.backward(w * 2.0)

    def test_store_entries_unreached_get_zero_grads(self):
        store = ParamStore()
        a = store.create("a", np.ones(2))
        store.create("b", np.ones(3))
        T.backward(T.sum(a), store)
        np.testing.assert_array_equal(store["b"].grad, np.zeros(3))

    def test_no_grad_builds_no_graph(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            out = w * 3.0
        self.assertFalse(out.requires_grad)

    def test_non_finite_forward_raises(self):
        with self.assertRaises(NumericError):
            T.div(np.ones(2), np.zeros(2))


class ScalarTests(unittest.TestCase):
    def test_constants_keep_zero_dims(self):
        self.assertEqual(T.as_tensor(0.0).shape, ())
        self.assertEqual(Tensor(2.5).ndim, 0)
        self.assertEqual(Tensor(np.float64(1.0), dtype=np.float64).shape, ())

    def test_loss_accumulated_from_a_zero_seed(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        total = T.as_tensor(0.0)
        for scale in (1.0, 3.0):
            total = total + T.mse_loss(w, np.zeros(2)) * scale
        self.assertEqual(total.shape, ())
        T.backward(total)
        np.testing.assert_allclose(w.grad, 4.0 * np.array([1.0, -2.0]))


class PrecisionTests(unittest.TestCase):
    def test_default_is_float32_and_switch_restores(self):
        self.assertEqual(T.get_default_dtype(), np.float32)
        with T.precision(np.float64):
            self.assertEqual(Tensor([1.0]).dtype, np.float64)
        self.assertEqual(Tensor([1.0]).dtype, np.float32)

    def test_unsupported_precision(self):
        with self.assertRaises(ContractError):
            with T.precision(np.float16):
                pass


if __name__ == "__main__":
    unittest.main()
