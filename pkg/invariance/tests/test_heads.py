import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.autodiff import Parameter, Tensor
from invariance.exceptions import ContractError, DimensionError, DomainError
from invariance.groups import CyclicRotationGroup
from invariance.heads import (MLPIIHead, MonomialIIHead, MonomialSpec, SAIIHead, SpatialMaxHead, WSIIHead,
                              invariance_residual, local_window_means, ws_groupconv_equivalence)
from invariance.verification import rotated_input


class HeadInvarianceTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(5)
		self.group = CyclicRotationGroup(4)
		self.x = Tensor(self.rng.standard_normal((2, 3, 7, 7)))

	def heads(self):
		specs = [MonomialSpec((0.0, 1.0, 2.0), (1.0, 0.5, 1.5), origin=0),
				 MonomialSpec((0.0, 1.0, 1.0), (0.2, 1.0, 2.0), origin=1)]
		return {
			'monomial': MonomialIIHead(specs),
			'ws-global': WSIIHead.create(3, 4, (7, 7), 'global', self.rng),
			'ws-local': WSIIHead.create(3, 4, (3, 3), 'local', self.rng),
			'mlp': MLPIIHead.create(3, [6, 4], 3, self.rng),
			'sa': SAIIHead.create(3, 4, 2, 7, 7, self.rng, out_channels=5),
			'spatial-max': SpatialMaxHead(),
		}

	def test_quarter_turns_leave_features_unchanged(self):
		for kind, head in self.heads().items():
			for probe in (1, 2, 3):
				with self.subTest(kind=kind, probe=probe):
					self.assertLess(invariance_residual(head, self.x, self.group, probe), 1e-6)

	def test_feature_widths(self):
		heads = self.heads()
		self.assertEqual(heads['monomial'].features(self.x, self.group).shape, (2, 6))
		self.assertEqual(heads['ws-local'].features(self.x, self.group).shape, (2, 4))
		self.assertEqual(heads['mlp'].features(self.x, self.group).shape, (2, 4))
		self.assertEqual(heads['sa'].features(self.x, self.group).shape, (2, 5))
		self.assertEqual(heads['sa'](self.x, self.group).shape, (2, 49, 5))
		self.assertEqual(heads['spatial-max'].features(self.x, self.group).shape, (2, 3))
		for kind, head in heads.items():
			with self.subTest(kind=kind):
				self.assertEqual(head.output_features(3), head.features(self.x, self.group).shape[-1])

	def test_unbatched_input(self):
		head = WSIIHead.create(3, 4, (3, 3), 'local', self.rng)
		single = head(self.x[0], self.group)
		self.assertEqual(single.shape, (4,))
		np.testing.assert_allclose(single.data, head(self.x, self.group).data[0])

	def test_eighth_and_sixteenth_turns_of_a_smooth_input(self):
		x = Tensor(rotated_input(self.rng)[None])
		size = x.shape[-1]
		specs = [MonomialSpec((0.0, 1.0, 2.0), (1.0, 0.2, 0.1), origin=0),
				 MonomialSpec((0.0, 1.5, 1.0), (0.5, 1.0, 1.0), origin=2)]
		heads = {
			'monomial': MonomialIIHead(specs, 'shift'),
			'ws-global': WSIIHead.create(3, 4, (size, size), 'global', self.rng),
			'ws-local': WSIIHead.create(3, 4, (3, 3), 'local', self.rng),
			'mlp': MLPIIHead.create(3, [6, 4], 3, self.rng),
			'sa': SAIIHead.create(3, 2, 1, size, size, self.rng),
			'spatial-max': SpatialMaxHead(),
		}
		for order in (8, 16):
			for kind, head in heads.items():
				with self.subTest(kind=kind, order=order):
					residual = invariance_residual(head, x, CyclicRotationGroup(order), 1, relative_to='sample')
					self.assertLess(residual, 5e-2)

	def test_residual_normalization(self):
		with self.assertRaises(ValueError):
			invariance_residual(SpatialMaxHead(), self.x, self.group, 1, relative_to='channel')


class MonomialHeadTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.group = CyclicRotationGroup(4)

	def test_single_factor_is_the_spatial_mean(self):
		x = np.random.default_rng(0).uniform(0.5, 2.0, size=(1, 2, 5, 5))
		head = MonomialIIHead([MonomialSpec((0.0,), (1.0,))], positivity='none')
		np.testing.assert_allclose(head(x, self.group).data, x.mean(axis=(2, 3)))

	def test_constant_input_shifts_to_one(self):
		head = MonomialIIHead([MonomialSpec((0.0, 1.0), (2.0, 1.0))])
		out = head(np.full((1, 2, 6, 6), -3.0), self.group).data
		np.testing.assert_allclose(out, np.ones((1, 2)))

	def test_channel_major_layout(self):
		x = np.ones((1, 2, 5, 5))
		x[0, 1] = 2.0
		specs = [MonomialSpec((0.0,), (1.0,)), MonomialSpec((0.0,), (2.0,))]
		out = MonomialIIHead(specs, positivity='none')(x, self.group).data
		np.testing.assert_allclose(out, [[1.0, 1.0, 2.0, 4.0]])

	def test_non_positive_input_needs_shift(self):
		head = MonomialIIHead([MonomialSpec((0.0, 1.0), (1.0, 1.0))], positivity='none')
		with self.assertRaises(DomainError):
			head(np.zeros((1, 1, 5, 5)), self.group)

	def test_margin_leaves_a_center(self):
		head = MonomialIIHead([MonomialSpec((0.0, 3.0), (1.0, 1.0))])
		self.assertEqual(head.margin, 3)
		with self.assertRaises(DimensionError):
			head(np.ones((1, 1, 6, 6)), self.group)

	def test_spec_contract(self):
		with self.assertRaises(ContractError):
			MonomialSpec((1.0, 2.0), (1.0, 1.0))
		with self.assertRaises(ContractError):
			MonomialSpec((0.0, 1.0), (1.0,))
		with self.assertRaises(ContractError):
			MonomialIIHead([MonomialSpec((0.0,), (1.0,)), MonomialSpec((0.0, 1.0), (1.0, 1.0))])

	def test_keep_copies_surviving_exponents(self):
		specs = [MonomialSpec((0.0, 1.0), (float(j), 1.0), origin=j) for j in range(4)]
		head = MonomialIIHead(specs)
		kept = head.keep([1, 3])
		self.assertEqual(kept.count, 2)
		self.assertEqual(kept.origins, [1, 3])
		np.testing.assert_array_equal(kept.exponents.data, [[1.0, 1.0], [3.0, 1.0]])
		kept.exponents.data[0, 0] = 9.0
		self.assertEqual(head.exponents.data[1, 0], 1.0)

	def test_exponent_drift(self):
		head = MonomialIIHead([MonomialSpec((0.0, 1.0, 2.0), (2.0, 2.0, 2.0)),
							   MonomialSpec((0.0, 1.0, 2.0), (0.5, 0.5, 0.5))])
		self.assertEqual(head.exponent_drift(self.group), 2.0)
		self.assertEqual(head.exponent_drift(CyclicRotationGroup(8)), 0.0)


class WeightedSumHeadTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(9)

	def test_local_head_equals_pooled_lifting_convolution(self):
		x = self.rng.standard_normal((2, 3, 6, 6))
		kernel = self.rng.standard_normal((4, 3, 3, 3))
		for order in (1, 4, 8):
			with self.subTest(order=order):
				self.assertLess(ws_groupconv_equivalence(x, kernel, CyclicRotationGroup(order)), 1e-10)

	def test_linear_mlp_head_is_a_local_ws_head(self):
		mlp = MLPIIHead.create(3, [4], 3, self.rng, bias=False, final_activation=False)
		# patch values are flattened channel-major, then row-major over the 3 x 3 window
		kernel = Parameter('psi', mlp.weights[0].data.T.reshape(4, 3, 3, 3))
		ws = WSIIHead(kernel, 'local')
		x = self.rng.standard_normal((2, 3, 6, 6))
		group = CyclicRotationGroup(4)
		np.testing.assert_allclose(mlp(x, group).data, ws(x, group).data, atol=1e-12)

	def test_window_means_of_ones(self):
		means = local_window_means(Tensor(np.ones((1, 1, 4, 4))), 3).data[0, 0]
		# corners of the window see one padded row and one padded column
		self.assertAlmostEqual(means[0, 0], 9 / 16)
		self.assertAlmostEqual(means[1, 1], 1.0)
		self.assertAlmostEqual(means[0, 1], 12 / 16)

	def test_global_extent_must_match(self):
		head = WSIIHead.create(1, 2, (5, 5), 'global', self.rng)
		with self.assertRaises(DimensionError):
			head(np.ones((1, 1, 7, 7)), CyclicRotationGroup(4))

	def test_invalid_mode(self):
		with self.assertRaises(ContractError):
			WSIIHead(Parameter('psi', np.ones((1, 1, 3, 3))), 'patchwise')


class AttentionHeadTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(13)

	def test_softmax_rows_sum_to_one(self):
		head = SAIIHead.create(3, 4, 2, 5, 5, self.rng, out_channels=4)
		rows = head.attention_rows(self.rng.standard_normal((3, 5, 5)), CyclicRotationGroup(4))
		self.assertEqual(len(rows), 4)
		for attention in rows:
			self.assertEqual(attention.shape, (1, 2, 25, 25))
			np.testing.assert_allclose(attention.sum(axis=-1), 1.0, atol=1e-12)
			self.assertTrue(np.all(attention >= 0))

	def attention_head(self, height, width, zero_logits=False):
		shape = (1, 3, 2)
		wq, wk = (np.zeros(shape) if zero_logits else self.rng.standard_normal(shape) for _ in range(2))
		return SAIIHead(Parameter('wq', wq), Parameter('wk', wk), Parameter('wv', self.rng.standard_normal(shape)),
						Parameter('encodings', self.rng.standard_normal((1, 2 * height - 1, 2 * width - 1, 3))))

	def test_zero_queries_and_keys_attend_uniformly(self):
		head = self.attention_head(4, 4, zero_logits=True)
		x = self.rng.standard_normal((3, 4, 4))
		group = CyclicRotationGroup(4)
		for attention in head.attention_rows(x, group):
			np.testing.assert_allclose(attention, 1 / 16, atol=1e-15)
		expected = x.reshape(3, 16).mean(axis=1) @ head.wv.data[0]
		out = head(x, group).data
		self.assertEqual(out.shape, (16, 2))
		np.testing.assert_allclose(out, np.broadcast_to(expected, (16, 2)), atol=1e-12)

	def test_single_token_returns_its_value(self):
		head = self.attention_head(1, 1)
		x = self.rng.standard_normal((3, 1, 1))
		for order in (4, 8):
			with self.subTest(order=order):
				out = head(x, CyclicRotationGroup(order)).data
				np.testing.assert_allclose(out, x.reshape(1, 3) @ head.wv.data[0], atol=1e-12)

	def test_heads_must_divide_channels(self):
		with self.assertRaises(ContractError):
			SAIIHead.create(3, 5, 2, 5, 5, self.rng)

	def test_encodings_cover_the_input(self):
		head = SAIIHead.create(3, 4, 1, 5, 5, self.rng)
		with self.assertRaises(DimensionError):
			head(self.rng.standard_normal((3, 7, 7)), CyclicRotationGroup(4))

	def test_attention_dropout_only_in_training(self):
		head = SAIIHead.create(3, 4, 1, 5, 5, self.rng, attention_dropout=0.5)
		x = self.rng.standard_normal((1, 3, 5, 5))
		group = CyclicRotationGroup(4)
		np.testing.assert_array_equal(head.features(x, group).data, head.features(x, group, train=False).data)
		trained = head.features(x, group, train=True, rng=np.random.default_rng(0)).data
		self.assertFalse(np.allclose(trained, head.features(x, group).data))
