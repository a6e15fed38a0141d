import numpy as np
from django.test import SimpleTestCase

from invariance.streams import CONSUMERS, SeedStreams, stream


class SeedStreamTests(SimpleTestCase):
	def test_same_seed_same_draws(self):
		for consumer in CONSUMERS:
			with self.subTest(consumer=consumer):
				self.assertTrue(np.array_equal(stream(7, consumer).random(4), stream(7, consumer).random(4)))

	def test_consumers_are_independent(self):
		draws = {consumer: tuple(stream(7, consumer).random(3)) for consumer in CONSUMERS}
		self.assertEqual(len(set(draws.values())), len(CONSUMERS))

	def test_draws_do_not_leak_between_consumers(self):
		streams = SeedStreams(2)
		streams['dropout'].random(100)
		self.assertTrue(np.array_equal(streams['init'].random(3), stream(2, 'init').random(3)))
		self.assertIs(streams['init'], streams['init'])

	def test_unknown_consumer(self):
		with self.assertRaises(KeyError):
			SeedStreams(0)['weights']
