"""Counter-based splittable random streams.

All stochastic operations in this package draw from a RandomStream: a
(seed, path) pair that deterministically names one independent generator.
Child streams are derived by appending indices to the path, so any unit of
work (a window, a sample, a trial) gets the same stream no matter which
worker runs it or in what order. Generators are Philox counter-based
bit streams keyed through numpy's SeedSequence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RandomStream:
    """Immutable handle naming one reproducible random stream."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RandomStream":
        """Derive the sub-stream at the given index path."""
        return RandomStream(self.seed, self.path + tuple(int(i) for i in indices))

    def child_named(self, name: str) -> "RandomStream":
        """Derive a sub-stream keyed by a string (e.g. an image id)."""
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
        return RandomStream(self.seed, self.path + words)

    def generator(self) -> np.random.Generator:
        """Materialize the stream as a numpy Generator."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(stream_or_rng) -> np.random.Generator:
    """Accept either a RandomStream or an already-built Generator."""
    if isinstance(stream_or_rng, RandomStream):
        return stream_or_rng.generator()
    if isinstance(stream_or_rng, np.random.Generator):
        return stream_or_rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(stream_or_rng)!r}")
