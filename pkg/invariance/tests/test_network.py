import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.exceptions import BuildError, ContractError
from invariance.heads import MonomialSpec
from invariance.network import (BatchNorm, HeadConfig, ModelConfig, build_model, effective_channels,
                                feature_extractor_budget, reference_extractor_count)
from invariance.steerable import rescaled_channels
from invariance.training import model_invariance_residual


def small_config(kind='monomial', **overrides):
	head = HeadConfig(kind=kind, monomials=4, factors=2, distances=[0.0, 1.0], out_channels=4,
					  mlp_widths=[4], sa_channels=4, sa_heads=2)
	values = dict(image_size=8, classes=3, channels=[2, 2], n_alpha=4, n_f=2, pool_after=[0], head=head, dense=[4])
	values.update(overrides)
	return ModelConfig(**values)


class BuildModelTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.rng = np.random.default_rng(21)
		self.images = self.rng.standard_normal((3, 1, 8, 8))

	def test_every_head_produces_class_logits(self):
		for kind in ('monomial', 'ws-global', 'ws-local', 'mlp', 'sa', 'spatial-max'):
			with self.subTest(kind=kind):
				model = build_model(small_config(kind), self.rng)
				self.assertEqual(model.forward(self.images).shape, (3, 3))
				self.assertEqual(model.head.kind, kind)

	def test_logits_invariant_to_quarter_turns(self):
		for kind in ('monomial', 'ws-local', 'sa'):
			with self.subTest(kind=kind):
				model = build_model(small_config(kind), self.rng)
				self.assertLess(model_invariance_residual(model, self.images), 1e-6)

	def test_plain_backbone_uses_the_trivial_group(self):
		model = build_model(small_config('spatial-max', backbone='cnn'), self.rng)
		self.assertEqual(model.group.order, 1)
		self.assertEqual(model.forward(self.images).shape, (3, 3))

	def test_given_monomials_replace_the_random_pool(self):
		specs = [MonomialSpec((0.0, 1.0), (0.5, 0.5), origin=7)]
		model = build_model(small_config(), self.rng, specs)
		self.assertEqual(model.monomial_head().specs()[0].origin, 7)
		self.assertEqual(model.first_dense().weight.shape, (2, 4))

	def test_describe(self):
		config = small_config()
		description = build_model(config, self.rng).describe()
		self.assertEqual(description['model'], config.to_dict())
		self.assertEqual(description['head']['kind'], 'monomial')
		self.assertEqual(len(description['head']['monomials']), 4)
		self.assertEqual(ModelConfig.from_dict(description['model']), config)

	def test_build_errors(self):
		with self.assertRaises(BuildError):
			build_model(small_config(backbone='resnet'), self.rng)
		with self.assertRaises(BuildError):
			build_model(small_config(channels=[]), self.rng)
		far = small_config()
		far.head.distances = [4.0]
		with self.assertRaises(BuildError) as caught:
			build_model(far, self.rng)
		self.assertEqual(caught.exception.layers, ('group_pool', 'head'))
		with self.assertRaises(BuildError):
			build_model(small_config(head=HeadConfig(kind='capsule')), self.rng)


class StateDictTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.images = np.random.default_rng(2).standard_normal((2, 1, 8, 8))

	def test_round_trip_reproduces_outputs(self):
		config = small_config(batch_norm=True)
		source = build_model(config, np.random.default_rng(0))
		source.forward(self.images, train=True)
		target = build_model(config, np.random.default_rng(1), source.monomial_head().specs())
		target.load_state_dict(source.state_dict())
		np.testing.assert_array_equal(target.forward(self.images).data, source.forward(self.images).data)
		self.assertIn('conv0.bn.running_mean', source.state_dict())

	def test_mismatched_state_rejected(self):
		model = build_model(small_config(), np.random.default_rng(0))
		state = model.state_dict()
		state.pop('dense0.bias')
		with self.assertRaises(ContractError):
			model.load_state_dict(state)


class PruneMonomialsTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.model = build_model(small_config(batch_norm=True), np.random.default_rng(4))

	def test_surviving_rows_carry_over(self):
		dense = self.model.first_dense()
		before = dense.weight.data.copy()
		exponents = self.model.monomial_head().exponents.data.copy()
		self.model.prune_monomials([2, 0])
		head = self.model.monomial_head()
		self.assertEqual(head.count, 2)
		# channel-major rows: c * n_m + j
		np.testing.assert_array_equal(self.model.first_dense().weight.data, before[[0, 2, 4, 6]])
		np.testing.assert_array_equal(head.exponents.data, exponents[[0, 2]])
		norm = [layer for layer in self.model.layers if isinstance(layer, BatchNorm) and layer.name == 'head.bn'][0]
		self.assertEqual(norm.gamma.shape, (4,))
		self.assertEqual(self.model.forward(np.ones((1, 1, 8, 8))).shape, (1, 3))


class BudgetTests(SimpleTestCase):
	def test_extractor_count_matches_built_model(self):
		config = small_config()
		with ad.default_dtype(np.float64):
			model = build_model(config, np.random.default_rng(0))
		budget = feature_extractor_budget(config)
		self.assertEqual(budget.equivariant, model.extractor_parameter_count())
		# 2nF * c_in * c_out (* n for group layers) + biases
		self.assertEqual(budget.equivariant, (4 * 1 * 2 + 2) + (4 * 2 * 2 * 4 + 2))
		self.assertEqual(budget.reference, reference_extractor_count(config))
		self.assertEqual(budget.reference, (9 * 1 * 2 + 2) + (9 * 2 * 2 + 2))

	def test_rescale_divides_channels(self):
		config = ModelConfig(channels=[32, 64], kernel_size=3, n_alpha=8, n_f=16, rescale=True)
		self.assertEqual(effective_channels(config), [rescaled_channels(32, 16 / 3), rescaled_channels(64, 16 / 3)])
		config.rescale = False
		self.assertEqual(effective_channels(config), [32, 64])
