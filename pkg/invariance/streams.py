"""
One root seed, split deterministically into independent generators per consumer.
"""
import numpy as np

CONSUMERS = ('data', 'init', 'dropout', 'augmentation', 'selection', 'subset', 'verify')


def stream(seed: int, consumer: str) -> np.random.Generator:
    if consumer not in CONSUMERS:
        raise KeyError(f"unknown random stream {consumer!r}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=(CONSUMERS.index(consumer),))
    return np.random.default_rng(sequence)


class SeedStreams:
    """Lazily created generators, one per consumer, all derived from `seed`."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._generators = {}

    def __getitem__(self, consumer: str) -> np.random.Generator:
        if consumer not in self._generators:
            self._generators[consumer] = stream(self.seed, consumer)
        return self._generators[consumer]
