import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from invariance import autodiff as ad
from invariance.autodiff import Tensor
from invariance.datasets import LabeledImages
from invariance.exceptions import ConfigError, ContractError, FormatError
from invariance.functional import cross_entropy
from invariance.heads import MonomialSpec
from invariance.network import HeadConfig, ModelConfig, build_model
from invariance.selection import (SelectionConfig, catalog_pool, connectivity_scores, connectivity_select,
                                  magnitude_prune, magnitude_scores, rank, read_sidecar, select_random,
                                  surviving_checksum, write_sidecar)


def monomial_model(count=6, seed=0):
	head = HeadConfig(kind='monomial', monomials=count, factors=2, distances=[0.0, 1.0])
	config = ModelConfig(image_size=8, classes=3, channels=[2, 2], n_alpha=4, n_f=2, pool_after=[0], head=head,
						 dense=[4])
	return build_model(config, np.random.default_rng(seed))


class ScoreTests(SimpleTestCase):
	def test_magnitude_scores_group_rows_by_monomial(self):
		weight = np.random.default_rng(0).standard_normal((3 * 4, 5))
		scores = magnitude_scores(weight, 4)
		expected = [np.mean([np.abs(weight[c * 4 + j]).mean() for c in range(3)]) for j in range(4)]
		np.testing.assert_allclose(scores.scores, expected)
		self.assertEqual(scores.provenance, 'magnitude')

	def test_magnitude_scores_need_whole_groups(self):
		with self.assertRaises(ContractError):
			magnitude_scores(np.ones((7, 2)), 4)

	def test_rank_breaks_ties_to_the_lower_index(self):
		self.assertEqual(rank(np.array([1.0, 3.0, 3.0, 2.0]), 2), [1, 2])
		self.assertEqual(rank(np.array([5.0, 5.0, 5.0]), 1), [0])
		self.assertEqual(rank(np.array([0.1, 0.4, 0.3, 0.2]), 3), [1, 2, 3])


class SelectionConfigTests(SimpleTestCase):
	def test_keep_fraction_schedule(self):
		config = SelectionConfig(pool=50, target=5, pretrain_epochs=10, keep_fraction=0.5).validate()
		self.assertEqual(config.steps(), [(10, 25), (20, 13), (30, 7), (40, 5)])

	def test_explicit_schedule_wins(self):
		config = SelectionConfig(pool=50, target=5, schedule=[(10, 25), (15, 5)], keep_fraction=0.5)
		self.assertEqual(config.validate().steps(), [(10, 25), (15, 5)])

	def test_one_shot_default(self):
		self.assertEqual(SelectionConfig(pool=20, target=4, pretrain_epochs=3).steps(), [(3, 4)])

	def test_invalid_schedules(self):
		cases = {
			'increasing keep': dict(schedule=[(10, 25), (15, 30)], target=30),
			'wrong final keep': dict(schedule=[(10, 25), (15, 10)]),
			'epochs go back': dict(schedule=[(10, 25), (5, 5)]),
			'target above pool': dict(target=60),
			'nothing kept': dict(target=0),
			'bad fraction': dict(keep_fraction=1.0),
			'unknown algorithm': dict(algorithm='genetic'),
		}
		for name, overrides in cases.items():
			with self.subTest(name):
				with self.assertRaises(ConfigError):
					SelectionConfig(pool=50, **{'target': 5, **overrides}).validate()

	def test_fitted_keeps_steps_that_leave_retraining(self):
		config = SelectionConfig(pool=50, target=5, schedule=[(10, 25), (15, 5)]).validate()
		self.assertEqual(config.fitted(20).steps(), [(10, 25), (15, 5)])
		with self.assertRaises(ConfigError) as caught:
			config.fitted(15)
		self.assertEqual(caught.exception.field, 'selection.schedule')
		self.assertEqual(replace(config, algorithm='random').fitted(15).steps(), [(10, 25), (15, 5)])

	def test_fitted_scales_steps_with_the_run(self):
		config = SelectionConfig(pool=50, target=5, pretrain_epochs=3, schedule=[(10, 25), (15, 5)]).validate()
		fitted = config.fitted(40, 2.0).validate()
		self.assertEqual((fitted.steps(), fitted.pretrain_epochs), ([(20, 25), (30, 5)], 6))
		self.assertEqual(config.fitted(40, 1.25).steps(), [(13, 25), (19, 5)])

	def test_fitted_one_shot_needs_pretraining_to_end_early(self):
		config = SelectionConfig(pool=20, target=4, pretrain_epochs=10).validate()
		self.assertEqual(config.fitted(11).steps(), [(10, 4)])
		with self.assertRaises(ConfigError) as caught:
			config.fitted(10)
		self.assertEqual(caught.exception.field, 'selection.pretrain_epochs')
		connectivity = replace(config, algorithm='connectivity', iterative=False)
		with self.assertRaises(ConfigError):
			connectivity.fitted(5)


class PoolTests(SimpleTestCase):
	def test_catalog_covers_every_distance_combination(self):
		head = HeadConfig(factors=3, distances=[0.0, 1.0])
		pool = catalog_pool(6, head, 8, np.random.default_rng(0))
		tails = {spec.distances[1:] for spec in pool}
		self.assertEqual(tails, {(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)})
		self.assertEqual([spec.origin for spec in pool], list(range(6)))
		for spec in pool:
			self.assertLessEqual(sum(spec.exponents), 8)
		with self.assertRaises(ContractError):
			catalog_pool(3, head, 8, np.random.default_rng(0))

	def test_select_random_is_seeded_and_ordered(self):
		pool = [MonomialSpec((0.0, 1.0), (1.0, 1.0), origin=j) for j in range(10)]
		first = select_random(pool, 4, 3)
		self.assertEqual(first, select_random(pool, 4, 3))
		origins = [spec.origin for spec in first]
		self.assertEqual(origins, sorted(origins))
		self.assertEqual(len(set(origins)), 4)
		self.assertEqual(select_random(pool, 0, 3), [])
		with self.assertRaises(ContractError):
			select_random(pool, 11, 3)


class MagnitudePruneTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		self.model = monomial_model()
		dense = self.model.first_dense()
		# monomial j gets downstream weights of magnitude j + 1
		magnitudes = np.tile(np.arange(1.0, 7.0), 2)[:, None]
		dense.weight.data = np.ones_like(dense.weight.data) * magnitudes
		self.fitted = []

	def fit(self, model, epochs):
		self.fitted.append(epochs)

	def test_schedule_prunes_lowest_magnitudes(self):
		config = SelectionConfig(pool=6, target=2, schedule=[(2, 4), (3, 2)]).validate()
		result = magnitude_prune(self.model, config, self.fit)
		self.assertEqual(self.fitted, [2, 1])
		self.assertEqual([(s.epoch, s.pool_before, s.kept) for s in result.steps],
						 [(2, 6, [2, 3, 4, 5]), (3, 4, [2, 3])])
		self.assertEqual([spec.origin for spec in result.specs], [4, 5])
		self.assertEqual(self.model.monomial_head().count, 2)
		np.testing.assert_allclose(self.model.monomial_head().scores, [5.0, 6.0])

	def test_checksum_is_continuous_across_the_boundary(self):
		config = SelectionConfig(pool=6, target=3, schedule=[(0, 3)]).validate()
		before = surviving_checksum(self.model, [3, 4, 5])
		result = magnitude_prune(self.model, config, self.fit)
		self.assertEqual(self.fitted, [])
		self.assertEqual(result.steps[0].checksum, before)
		self.assertEqual(surviving_checksum(self.model, range(3)), before)


class ConnectivityTests(SimpleTestCase):
	def setUp(self):
		self.enterContext(ad.default_dtype(np.float64))
		rng = np.random.default_rng(8)
		self.model = monomial_model(count=4, seed=1)
		self.data = LabeledImages(rng.standard_normal((6, 1, 8, 8)), np.array([0, 1, 2, 0, 1, 2]))

	def loss(self, mask):
		self.model.set_monomial_mask(Tensor(mask))
		try:
			return float(cross_entropy(self.model.forward(self.data.images), self.data.labels).data)
		finally:
			self.model.set_monomial_mask(None)

	def test_scores_match_central_differences(self):
		scores = connectivity_scores(self.model, self.data, batch_size=4).scores
		eps = 1e-6
		for j in range(4):
			step = np.zeros(4)
			step[j] = eps
			numeric = (self.loss(np.ones(4) + step) - self.loss(np.ones(4) - step)) / (2 * eps)
			self.assertAlmostEqual(scores[j], abs(numeric), delta=1e-6)
		self.assertIsNone(self.model.first_dense().input_mask)
		self.assertTrue(all(p.grad is None for p in self.model.parameters()))

	def test_duplicate_monomials_score_alike(self):
		spec = MonomialSpec((0.0, 1.0), (1.5, 0.5))
		others = [MonomialSpec((0.0, 0.0), (1.0, 2.0)), MonomialSpec((0.0, 1.0), (0.25, 3.0))]
		head = HeadConfig(kind='monomial', monomials=4, factors=2, distances=[0.0, 1.0])
		config = ModelConfig(image_size=8, classes=3, channels=[2, 2], n_alpha=4, n_f=2, pool_after=[0], head=head,
							 dense=[4])
		model = build_model(config, np.random.default_rng(2), [spec, replace(spec, origin=1)] + others)
		weight = model.first_dense().weight
		for c in range(model.head_channels()):
			weight.data[c * 4 + 1] = weight.data[c * 4]
		scores = connectivity_scores(model, self.data, batch_size=4).scores
		self.assertAlmostEqual(scores[0], scores[1], delta=1e-10)
		self.assertGreater(scores[0], 0.0)

	def test_one_shot_selection_without_pretraining(self):
		config = SelectionConfig(pool=4, target=2, algorithm='connectivity', pretrain_epochs=0,
								 iterative=False).validate()
		result = connectivity_select(self.model, self.data, config, lambda model, epochs: None)
		self.assertEqual(len(result.specs), 2)
		self.assertEqual(len(result.steps), 1)
		self.assertEqual(self.model.monomial_head().count, 2)


class SidecarTests(SimpleTestCase):
	def setUp(self):
		self.dir = Path(self.enterContext(tempfile.TemporaryDirectory()))

	def test_write_then_read(self):
		specs = [MonomialSpec((0.0, 1.0, 2.0), (0.5, 1.25, 2.0), origin=17, score=0.25),
				 MonomialSpec((0.0, 0.0, 1.0), (1.0, 1.0, 1.0), origin=3)]
		path = write_sidecar(self.dir / 'run' / 'monomials.json', specs, 16)
		self.assertEqual(read_sidecar(path), (specs, 16))

	def test_unknown_layout_rejected(self):
		path = self.dir / 'monomials.json'
		path.write_text('{"layout": "monomial-major", "monomials": []}')
		with self.assertRaises(FormatError):
			read_sidecar(path)

	def test_malformed_json_reports_offset(self):
		path = self.dir / 'monomials.json'
		path.write_text('{"layout": ')
		with self.assertRaises(FormatError) as caught:
			read_sidecar(path)
		self.assertIsNotNone(caught.exception.offset)
