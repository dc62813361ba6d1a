"""Counter-based random streams.

Every stochastic routine in the package takes a ``numpy.random.Generator``.
:class:`RngStream` names a reproducible Philox stream by ``(seed, stream_id)``
so that independent pieces of work (seeds, evaluation rollouts, training
iterations) never share state and can be regenerated in any order.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            value = getattr(self, name)
            if not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")

    def _key(self) -> int:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        words = ss.generate_state(2, dtype=np.uint64)
        return int(words[0]) | (int(words[1]) << 64)

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self._key(), counter=int(self.counter))
        return np.random.Generator(bitgen)

    def spawn(self, index: int) -> "RngStream":
        """Child stream; distinct indices give independent streams."""
        child = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), int(index))
        ).generate_state(2, dtype=np.uint64)
        return RngStream(seed=int(child[0]), stream_id=int(child[1]))

    def advance(self, steps: int = 1) -> "RngStream":
        return replace(self, counter=(self.counter + int(steps)) & _MASK64)


def as_generator(rng) -> np.random.Generator:
    """Accept ``None``, an int seed, an :class:`RngStream` or a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.Generator(np.random.Philox(rng))
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for a hierarchical stream address ``seed / path[0] / path[1] ...``."""
    s = RngStream(seed=int(seed))
    for index in path:
        s = s.spawn(index)
    return s.generator()
