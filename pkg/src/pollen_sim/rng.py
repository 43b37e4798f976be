"""Counter-based random streams.

Every random quantity in a run is keyed by ``(master_seed, *counters)`` so the
value drawn for, say, a client's training time in a given round does not depend
on the order in which the simulator visits clients or workers.
"""

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix_key(seed: int, *counters: int) -> int:
    """Fold a seed and any number of non-negative counters into one 64-bit key."""
    h = _splitmix64(seed & _MASK)
    for c in counters:
        h = _splitmix64(h ^ (c & _MASK))
    return h


class CounterStream:
    """Cheap deterministic stream of uniforms/normals for one key tuple.

    Exposes the small subset of the ``numpy.random.Generator`` API that the
    simulator uses, so either can be passed where an rng is expected.
    """

    __slots__ = ("_key", "_counter")

    def __init__(self, seed: int, *counters: int):
        self._key = mix_key(seed, *counters)
        self._counter = 0

    def _next64(self) -> int:
        self._counter += 1
        return _splitmix64(self._key ^ _splitmix64(self._counter))

    def random(self) -> float:
        # 53 random bits, shifted into (0, 1)
        return ((self._next64() >> 11) + 0.5) * (1.0 / (1 << 53))

    def standard_normal(self) -> float:
        u1 = self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def generator(seed: int, *counters: int) -> np.random.Generator:
    """numpy Generator for the substream ``(seed, *counters)``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(counters)))


# Stream tags, kept distinct so independent quantities never share a substream.
STREAM_POPULATION = 1
STREAM_COHORT = 2
STREAM_TRAINING = 3
STREAM_CLIENT_UPDATE = 4
STREAM_MODEL_INIT = 5
