import math
from fractions import Fraction

import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.autodiff import Tensor
from invariance.exceptions import ContractError, DimensionError
from invariance.functional import conv2d
from invariance.gradcheck import max_gradient_error
from invariance.groups import CyclicRotationGroup, RegularFeatureMap, act_on_plane, act_on_regular
from invariance.steerable import (SteerableFilter, build_basis, group_conv, group_max_pool, lifting_conv,
                                  param_ratio, rescaled_channels, spatial_max_pool)


class ParamRatioTests(SimpleTestCase):
	def test_published_ratio(self):
		ratio = param_ratio(3, 8, 16)
		self.assertEqual(ratio.ratio, Fraction(256, 9))
		self.assertEqual(ratio.exact_factor, Fraction(16, 3))
		self.assertEqual(ratio.channel_factor, 16 / 3)

	def test_lifting_ratio_drops_rotations(self):
		ratio = param_ratio(3, 8, 16, lifting=True)
		self.assertEqual(ratio.ratio, Fraction(32, 9))
		self.assertIsNone(ratio.exact_factor)
		self.assertAlmostEqual(ratio.channel_factor, math.sqrt(32 / 9))

	def test_rescaled_channels(self):
		self.assertEqual(rescaled_channels(32, 16 / 3), 6)
		self.assertEqual(rescaled_channels(1, 16 / 3), 1)

	def test_invalid_arguments(self):
		with self.assertRaises(ContractError):
			param_ratio(0, 8, 16)


class BasisTests(SimpleTestCase):
	def test_shape_and_unit_norm(self):
		basis = build_basis(3, 4, 8)
		self.assertEqual(basis.filters.shape, (8, 8, 3, 3))
		norms = np.linalg.norm(basis.filters[0].reshape(8, -1), axis=1)
		np.testing.assert_allclose(norms, np.ones(8))

	def test_ring_major_enumeration(self):
		basis = build_basis(5, 3, 4)
		rings = [h.ring for h in basis.harmonics]
		self.assertEqual(rings, sorted(rings))
		self.assertEqual(basis.harmonics[0].frequency, 0)
		self.assertEqual(basis.index_of(0, 0), 0)

	def test_quarter_turn_filters_are_permutations(self):
		basis = build_basis(5, 3, 4)
		np.testing.assert_array_equal(basis.filters[1], np.rot90(basis.filters[0], 1, axes=(-2, -1)))

	def test_even_kernel_rejected(self):
		with self.assertRaises(ContractError):
			build_basis(4, 2, 4)


class ConvolutionTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(11)
		self.basis = build_basis(3, 2, 4)
		self.group = self.basis.group

	def test_lifting_conv_is_equivariant_to_quarter_turns(self):
		filt = SteerableFilter.create('psi', 2, 3, self.basis, self.rng)
		x = Tensor(self.rng.standard_normal((2, 9, 9)))
		out = lifting_conv(x, filt, self.basis)
		self.assertEqual(out.data.shape, (3, 4, 9, 9))
		for g in self.group.elements:
			lhs = lifting_conv(act_on_plane(self.group, g, x), filt, self.basis).data.data
			rhs = act_on_regular(g, out).data.data
			np.testing.assert_allclose(lhs[..., 1:-1, 1:-1], rhs[..., 1:-1, 1:-1], atol=1e-12)

	def test_group_conv_is_equivariant_to_quarter_turns(self):
		filt = SteerableFilter.create('psi', 2, 3, self.basis, self.rng, group_input=True)
		fmap = RegularFeatureMap(Tensor(self.rng.standard_normal((2, 2, 4, 9, 9))), self.group)
		out = group_conv(fmap, filt, self.basis)
		for g in self.group.elements:
			lhs = group_conv(act_on_regular(g, fmap), filt, self.basis).data.data
			rhs = act_on_regular(g, out).data.data
			np.testing.assert_allclose(lhs[..., 1:-1, 1:-1], rhs[..., 1:-1, 1:-1], atol=1e-12)

	def test_trivial_group_reduces_to_plain_convolution(self):
		basis = build_basis(3, 2, 1)
		filt = SteerableFilter.create('psi', 2, 3, basis, self.rng, group_input=True)
		fmap = RegularFeatureMap(Tensor(self.rng.standard_normal((2, 1, 7, 7))), basis.group)
		kernel = np.einsum('oib,bxy->oixy', filt.coefficients.data[:, :, 0, :], basis.filters[0])
		direct = conv2d(fmap.data.reshape(2, 7, 7), kernel).data
		np.testing.assert_allclose(group_conv(fmap, filt, basis).data.data[:, 0], direct, atol=1e-12)

	def test_group_max_pool_commutes_with_rotation(self):
		fmap = RegularFeatureMap(Tensor(self.rng.standard_normal((3, 4, 6, 6))), self.group)
		pooled = group_max_pool(fmap)
		for g in self.group.elements:
			np.testing.assert_array_equal(group_max_pool(act_on_regular(g, fmap)).data,
										  act_on_plane(self.group, g, pooled).data)
		self.assertEqual(spatial_max_pool(pooled).shape, (3,))

	def test_filter_kind_checked(self):
		lifting = SteerableFilter.create('psi', 2, 3, self.basis, self.rng)
		fmap = RegularFeatureMap(Tensor(self.rng.standard_normal((2, 4, 5, 5))), self.group)
		with self.assertRaises(ContractError):
			group_conv(fmap, lifting, self.basis)
		wide = SteerableFilter.create('psi', 3, 3, self.basis, self.rng, group_input=True)
		with self.assertRaises(DimensionError):
			group_conv(fmap, wide, self.basis)

	def test_coefficient_gradients(self):
		filt = SteerableFilter.create('psi', 1, 2, self.basis, self.rng, group_input=True)
		fmap = RegularFeatureMap(Tensor(self.rng.standard_normal((1, 4, 5, 5))), self.group)
		probe = self.rng.standard_normal((2, 4, 5, 5))
		error = max_gradient_error(lambda: (group_conv(fmap, filt, self.basis).data * probe).sum(),
								   [filt.coefficients])
		self.assertLess(error, 1e-6)
