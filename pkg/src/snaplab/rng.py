"""Seeded random streams with label-keyed substreams.

Every consumer derives its own stream from ``(seed, labels...)`` so results
do not depend on call order or on how work is split across workers.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _label_to_int(label) -> int:
    if isinstance(label, (bool, np.bool_)):
        return int(label)
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class Rng:
    """Immutable handle to a Philox (counter-based) stream.

    ``Rng(seed).child("epoch", 3).generator()`` always yields the same
    sequence, on any platform.
    """

    seed: int
    key: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def child(self, *labels) -> "Rng":
        return Rng(self.seed, self.key + tuple(_label_to_int(lb) for lb in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_rng(rng) -> Rng:
    if isinstance(rng, Rng):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Rng(int(rng))
    raise TypeError(f"expected Rng or int seed, got {type(rng).__name__}")
