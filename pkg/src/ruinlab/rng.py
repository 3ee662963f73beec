"""Counter-based random streams keyed by (master seed, stream index)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamSeed:
    """Philox key = (master_seed, stream_index); the draw counter starts at zero.

    Distinct stream indices give non-overlapping, reproducible substreams, so a
    batch always sees the same numbers whichever worker runs it.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not (0 <= self.master_seed <= _MASK64):
            raise ValueError("master_seed must fit in 64 bits")
        if not (0 <= self.stream_index <= _MASK64):
            raise ValueError("stream_index must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, offset: int) -> "StreamSeed":
        return StreamSeed(self.master_seed, self.stream_index + offset)
