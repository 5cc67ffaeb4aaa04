"""Seedable random streams.

Streams are built on numpy's PCG64 seeded through ``SeedSequence`` with the
stream id as spawn key, so ``(seed, stream_id)`` pairs give reproducible and
statistically independent generators (one per chain or worker).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RngStream:
    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "RngStream":
        """Child stream; distinct from the parent and from every other index."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.stream_id = self.stream_id
        ss = np.random.SeedSequence(
            int(self.seed), spawn_key=(int(self.stream_id), int(index) + 1)
        )
        child.gen = np.random.Generator(np.random.PCG64(ss))
        return child


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
