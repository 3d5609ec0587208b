"""Deterministic random streams.

Every stochastic choice in the engine draws from an RngStream identified
by (seed, stream path). The same identification yields the same draws on
any platform, and distinct stream paths never share generator state, so
runs are reproducible and components can be reseeded independently.
"""

from __future__ import annotations

import numpy as np

# Well-known top-level stream ids. Components derive finer streams by
# splitting, e.g. RngStream(seed, (DATA, class_id, index)).
DATA = 0
INIT = 1
TRAIN = 2
MEMORY = 3
SCHEDULE = 4
ANALYSIS = 5
BATCH = 6


class RngStream:
    """A named, reproducible random stream.

    (seed, stream) fully determines the sequence of draws; `split`
    derives an independent child stream without consuming state.
    """

    def __init__(self, seed: int, stream: int | tuple[int, ...] = ()):
        if isinstance(stream, int):
            stream = (stream,)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream))
        )

    def split(self, *ids: int) -> "RngStream":
        """Independent child stream; does not advance this stream."""
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    # Thin delegation for the draws the engine uses.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, x):
        return self.gen.permutation(x)

    def shuffle(self, x):
        self.gen.shuffle(x)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"
