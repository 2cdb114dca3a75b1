"""Deterministic random streams.

A run owns a single seeded stream and derives named child streams from it
(one per independent concern: weight init, batch sampling, data synthesis).
Derivation hashes the full name path, so adding a new consumer never
perturbs the draws of existing ones.
"""

import zlib

import numpy as np


class RandomStream:
    """A seeded PCG64 generator with stable named substreams."""

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self.path = tuple(_path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self.path))
        )

    def child(self, name):
        """Derive an independent stream identified by this stream plus `name`."""
        return RandomStream(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def uniform(self, low, high, shape):
        return self.generator.uniform(low, high, size=shape)

    def normal(self, loc, scale, shape):
        return self.generator.normal(loc, scale, size=shape)

    def choice(self, n, size, p=None, replace=True):
        return self.generator.choice(n, size=size, p=p, replace=replace)

    def permutation(self, n):
        return self.generator.permutation(n)
