import math

from django.test import SimpleTestCase

from invariance.exceptions import ConfigError, ContractError
from invariance.groups import CyclicRotationGroup
from invariance.verification import (SUITE_CHECKS, SUITES, TOLERANCES, Check, CheckResult, VerifyConfig,
                                     quarter_turn_probes, run_check, run_suites)


class SuiteTests(SimpleTestCase):
	def test_group_suite_passes(self):
		results = run_suites(VerifyConfig(suite='group', samples=2), threads=2)
		self.assertTrue(results)
		for result in results:
			self.assertTrue(result.passed, result.line())
		self.assertEqual({r.suite for r in results}, {'group'})

	def test_ws_identity_passes_in_both_precisions(self):
		for precision in (64, 32):
			with self.subTest(precision=precision):
				results = run_suites(VerifyConfig(suite='ws-identity', precision=precision, samples=1), threads=1)
				self.assertEqual(len(results), 3)
				self.assertTrue(all(r.passed for r in results), [r.line() for r in results])

	def test_results_do_not_depend_on_threads(self):
		config = VerifyConfig(suite='group', samples=2, seed=3)
		one = [r.residual for r in run_suites(config, threads=1)]
		four = [r.residual for r in run_suites(config, threads=4)]
		self.assertEqual(one, four)

	def test_requested_order_joins_the_axiom_checks(self):
		names = [r.name for r in run_suites(VerifyConfig(suite='group', n_alpha=6, samples=1), threads=1)]
		self.assertIn('axioms C_6', names)

	def test_rotation_drift_stays_within_interpolation_tolerance(self):
		checks = {c.name: c for c in SUITE_CHECKS['equivariance'](VerifyConfig(samples=1))}
		result = run_check(VerifyConfig(samples=1), 'equivariance', 5, checks['rotate_plane 16 x 22.5 degrees'])
		self.assertTrue(result.passed, result.line())
		self.assertEqual(result.tolerance, 1e-2)

	def test_eighth_turn_group_adds_rotated_head_checks(self):
		names = [c.name for c in SUITE_CHECKS['invariance'](VerifyConfig(n_alpha=8, samples=1))]
		self.assertIn('monomial head', names)
		self.assertIn('sa head, 45 degree rotation', names)
		self.assertIn('mlp model logits', names)
		names = [c.name for c in SUITE_CHECKS['invariance'](VerifyConfig(n_alpha=3, samples=1))]
		self.assertIn('ws-global head, 120 degree rotation', names)
		self.assertNotIn('monomial head', names)
		self.assertNotIn('mlp model logits', names)

	def test_unsupported_precision(self):
		with self.assertRaises(ConfigError):
			run_suites(VerifyConfig(precision=16))

	def test_all_expands_to_every_suite(self):
		self.assertEqual(VerifyConfig().suites(), SUITES)
		self.assertEqual(VerifyConfig(suite='pruning').suites(), ('pruning',))


class CheckResultTests(SimpleTestCase):
	def test_failing_measure_is_reported(self):
		def broken(rng):
			raise ContractError('bad input')

		result = run_check(VerifyConfig(), 'group', 0, Check('broken', broken, 'exact'))
		self.assertFalse(result.passed)
		self.assertEqual(result.residual, math.inf)
		self.assertIn('ContractError: bad input', result.line())

	def test_residual_is_compared_with_the_tolerance(self):
		self.assertTrue(CheckResult('equivariance', 'drift', 5e-3, 1e-2).passed)
		self.assertFalse(CheckResult('equivariance', 'drift', 0.3, 1e-2).passed)
		self.assertFalse(CheckResult('equivariance', 'drift', math.nan, 1e-2).passed)
		line = CheckResult('group', 'axioms C_4', 0.0, 0.0).line()
		self.assertEqual(line, 'PASS group/axioms C_4: residual 0.000e+00 (tolerance 0e+00)')

	def test_every_check_has_a_known_tolerance(self):
		for order in (3, 4, 8):
			for suite, build in SUITE_CHECKS.items():
				for check in build(VerifyConfig(n_alpha=order, samples=1)):
					with self.subTest(order=order, suite=suite, check=check.name):
						self.assertIn(check.tolerance, TOLERANCES[64])

	def test_quarter_turn_probes(self):
		self.assertEqual([g.index for g in quarter_turn_probes(CyclicRotationGroup(8))], [2, 4, 6])
		self.assertEqual([g.index for g in quarter_turn_probes(CyclicRotationGroup(4))], [1, 2, 3])
		self.assertEqual(quarter_turn_probes(CyclicRotationGroup(3)), [])
