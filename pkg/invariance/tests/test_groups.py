import math

import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.autodiff import Tensor
from invariance.exceptions import ContractError, DimensionError
from invariance.groups import (CyclicRotationGroup, RegularFeatureMap, act_on_plane, act_on_regular, group_average,
                               orbit)
from invariance.sampling import bilinear_sample, cos_sin, quarter_turns, rotate_plane


class CyclicGroupTests(SimpleTestCase):
	def test_axioms_hold_for_every_order(self):
		for order in (1, 2, 4, 8, 16):
			with self.subTest(order=order):
				self.assertEqual(CyclicRotationGroup(order).axiom_violations(), 0)

	def test_composition_and_inverse(self):
		group = CyclicRotationGroup(8)
		self.assertEqual(group.compose(3, 7).index, 2)
		self.assertEqual(group.inverse(3).index, 5)
		self.assertEqual(group.compose(3, group.inverse(3)), group.identity)
		self.assertAlmostEqual(group.angle(2), math.pi / 2)

	def test_invalid_order(self):
		for order in (0, -4, 2.5):
			with self.assertRaises(ContractError):
				CyclicRotationGroup(order)

	def test_elements_of_other_groups_rejected(self):
		with self.assertRaises(ContractError):
			CyclicRotationGroup(4).element(CyclicRotationGroup(8).element(1))

	def test_cos_sin_exact_on_quarter_turns(self):
		group = CyclicRotationGroup(8)
		self.assertEqual(group.cos_sin(2), (0.0, 1.0))
		self.assertEqual(group.cos_sin(4), (-1.0, 0.0))
		self.assertEqual(cos_sin(3 * math.pi / 2), (0.0, -1.0))
		self.assertIsNone(quarter_turns(math.pi / 4))
		self.assertEqual(quarter_turns(-math.pi / 2), 3)


class PlaneActionTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(3)

	def test_quarter_turn_is_an_exact_permutation(self):
		x = self.rng.standard_normal((2, 5, 5))
		rotated = rotate_plane(x, math.pi / 2).data
		np.testing.assert_array_equal(rotated, np.rot90(x, 1, axes=(-2, -1)))
		np.testing.assert_array_equal(rotate_plane(rotated, -math.pi / 2).data, x)

	def test_regular_action_composes(self):
		group = CyclicRotationGroup(4)
		fmap = RegularFeatureMap(self.rng.standard_normal((3, 4, 6, 6)), group)
		twice = act_on_regular(1, act_on_regular(1, fmap))
		np.testing.assert_array_equal(twice.data.data, act_on_regular(2, fmap).data.data)
		for g in group.elements:
			back = act_on_regular(group.inverse(g), act_on_regular(g, fmap))
			np.testing.assert_array_equal(back.data.data, fmap.data.data)

	def test_regular_map_needs_group_axis(self):
		with self.assertRaises(DimensionError):
			RegularFeatureMap(np.zeros((3, 5, 6, 6)), CyclicRotationGroup(4))

	def test_orbit_average_is_invariant(self):
		group = CyclicRotationGroup(4)
		x = self.rng.standard_normal((6, 6))
		average = group_average(ad.stack(orbit(group, x)), group).data
		moved = group_average(ad.stack(orbit(group, act_on_plane(group, 1, x))), group).data
		np.testing.assert_allclose(moved, average, atol=1e-12)

	def test_small_rotation_of_smooth_image(self):
		rows, cols = np.meshgrid(np.arange(21.0) - 10, np.arange(21.0) - 10, indexing='ij')
		blob = np.exp(-(rows ** 2 + cols ** 2) / (2 * 4.0 ** 2))
		# a centered isotropic blob barely changes under any rotation
		rotated = rotate_plane(blob, math.radians(30)).data
		self.assertLess(np.max(np.abs(rotated - blob)), 2e-2)

	def test_full_turn_in_small_steps_of_smooth_image(self):
		rows, cols = np.meshgrid(np.arange(193.0) - 96.3, np.arange(193.0) - 95.6, indexing='ij')
		blob = np.exp(-(rows ** 2 + cols ** 2) / (2 * 24.0 ** 2))
		x = Tensor(blob)
		for _ in range(16):
			x = rotate_plane(x, math.radians(22.5))
		self.assertLess(np.max(np.abs(x.data - blob)), 1e-2)


class BilinearSampleTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))

	def test_integer_coordinates_read_pixels(self):
		image = np.arange(12.0).reshape(3, 4)
		out = bilinear_sample(image, np.array([[0.0, 0.0], [2.0, 3.0], [1.0, 2.0]])).data
		np.testing.assert_array_equal(out, [0.0, 11.0, 6.0])

	def test_midpoints_interpolate(self):
		image = np.array([[0.0, 2.0], [4.0, 6.0]])
		out = bilinear_sample(image, np.array([[0.5, 0.5], [0.0, 0.5]])).data
		np.testing.assert_allclose(out, [3.0, 1.0])

	def test_outside_reads_zero(self):
		image = np.ones((3, 3))
		out = bilinear_sample(image, np.array([[-5.0, 1.0], [-0.5, 1.0]])).data
		np.testing.assert_allclose(out, [0.0, 0.5])

	def test_contract(self):
		with self.assertRaises(DimensionError):
			bilinear_sample(np.ones(4), np.zeros((1, 2)))
		with self.assertRaises(DimensionError):
			bilinear_sample(np.ones((3, 3)), np.zeros((2, 3)))
		with self.assertRaises(ContractError):
			bilinear_sample(np.ones((3, 3)), np.array([[np.nan, 0.0]]))

	def test_rotate_rejects_non_finite_angles(self):
		with self.assertRaises(ContractError):
			rotate_plane(Tensor(np.ones((3, 3))), math.inf)
