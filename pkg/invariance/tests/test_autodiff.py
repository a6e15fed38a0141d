import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.autodiff import Parameter, Tensor, backward
from invariance.exceptions import ContractError, DimensionError, NonFiniteError
from invariance.functional import conv2d, cross_entropy, dense, dropout, max_pool2d
from invariance.gradcheck import check_gradients, max_gradient_error, relative_error


class BackwardTests(SimpleTestCase):
	def test_square_sum_gradient(self):
		x = Parameter('x', np.array([[1.0, -2.0, 3.0], [0.5, 0.0, -1.5]]))
		grads = backward((x * x).sum())
		np.testing.assert_array_equal(grads[x], 2 * x.data)
		np.testing.assert_array_equal(x.grad, 2 * x.data)

	def test_broadcast_gradient_is_summed_back(self):
		a = Parameter('a', np.zeros((2, 3)))
		b = Parameter('b', np.zeros(3))
		backward((a + b).sum())
		np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
		np.testing.assert_array_equal(a.grad, np.ones((2, 3)))

	def test_gradients_accumulate_until_zeroed(self):
		x = Parameter('x', np.array([1.0, 2.0]))
		backward((x * 3.0).sum())
		second = backward((x * 3.0).sum())
		# the returned map holds only this sweep
		np.testing.assert_array_equal(second[x], [3.0, 3.0])
		np.testing.assert_array_equal(x.grad, [6.0, 6.0])
		ad.zero_grad([x])
		self.assertIsNone(x.grad)

	def test_non_scalar_root_rejected(self):
		with self.assertRaises(ContractError):
			backward(Parameter('x', np.ones(3)) * 2.0)

	def test_max_routes_gradient_to_first_maximum(self):
		x = Parameter('x', np.array([[1.0, 5.0, 5.0]]))
		backward(x.max(axis=-1).sum())
		np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])

	def test_empty_dimension_rejected(self):
		with self.assertRaises(DimensionError):
			Tensor(np.zeros((0, 3)))


class DefaultDtypeTests(SimpleTestCase):
	def test_float_arrays_keep_their_precision(self):
		with ad.default_dtype(np.float32):
			self.assertEqual(Tensor([1, 2]).dtype, np.float32)
			self.assertEqual(Tensor(np.zeros(2, dtype=np.float64)).dtype, np.float64)
		with ad.default_dtype(np.float64):
			self.assertEqual(Tensor([1, 2]).dtype, np.float64)

	def test_precision_dtype(self):
		self.assertIs(ad.precision_dtype(64), np.float64)
		self.assertIs(ad.precision_dtype(32), np.float32)
		with self.assertRaises(ContractError):
			ad.precision_dtype(16)

	def test_finite_checks_flag_kernels(self):
		with ad.finite_checks():
			with self.assertRaises(NonFiniteError):
				Tensor(np.array([0.0])).log()
		# off by default
		self.assertTrue(np.isinf(Tensor(np.array([0.0])).log().data[0]))


class KernelGradientTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(7)

	def test_conv2d_matches_central_differences(self):
		x = Tensor(self.rng.standard_normal((2, 2, 5, 5)), requires_grad=True)
		w = Parameter('w', self.rng.standard_normal((3, 2, 3, 3)))
		probe = self.rng.standard_normal((2, 3, 5, 5))
		self.assertLess(max_gradient_error(lambda: (conv2d(x, w) * probe).sum(), [x, w]), 1e-6)

	def test_strided_conv2d_without_padding(self):
		x = Tensor(self.rng.standard_normal((1, 1, 7, 7)), requires_grad=True)
		w = Parameter('w', self.rng.standard_normal((2, 1, 3, 3)))
		out = conv2d(x, w, stride=2, padding=0)
		self.assertEqual(out.shape, (1, 2, 3, 3))
		probe = self.rng.standard_normal(out.shape)
		self.assertLess(max_gradient_error(lambda: (conv2d(x, w, stride=2, padding=0) * probe).sum(), [x, w]), 1e-6)

	def test_dense_cross_entropy(self):
		x = Tensor(self.rng.standard_normal((4, 5)), requires_grad=True)
		w = Parameter('w', self.rng.standard_normal((5, 3)))
		b = Parameter('b', self.rng.standard_normal(3))
		labels = np.array([0, 2, 1, 2])
		reports = check_gradients(lambda: cross_entropy(dense(x, w, b), labels), [x, w, b])
		self.assertEqual([r.name for r in reports], ['input0', 'w', 'b'])
		for report in reports:
			self.assertLess(report.error, 1e-6, report)

	def test_max_pool_away_from_ties(self):
		x = Tensor(self.rng.permutation(36).reshape(1, 1, 6, 6).astype(np.float64), requires_grad=True)
		probe = self.rng.standard_normal((1, 1, 3, 3))
		self.assertLess(max_gradient_error(lambda: (max_pool2d(x) * probe).sum(), [x]), 1e-6)

	def test_dropout_with_fixed_mask(self):
		x = Tensor(self.rng.standard_normal((3, 8)), requires_grad=True)
		out = dropout(x, 0.5, train=True, rng=np.random.default_rng(0))
		kept = out.data != 0
		np.testing.assert_allclose(out.data[kept], 2 * x.data[kept])
		np.testing.assert_array_equal(dropout(x, 0.5, train=False).data, x.data)
		error = max_gradient_error(lambda: dropout(x, 0.5, True, np.random.default_rng(0)).sum(), [x])
		self.assertLess(error, 1e-6)

	def test_relative_error(self):
		self.assertEqual(relative_error(np.zeros(3), np.zeros(3)), 0.0)
		self.assertAlmostEqual(relative_error(np.array([1.0, 0.0]), np.array([0.0, 0.0])), 1.0)
