"""
Counter-based random streams.

An RngState is a plain value (seed, stream_id). Draws come from a fresh
Philox generator keyed by both words, so the same state always yields the
same sequence, and children derived with split() are independent streams
regardless of which thread consumes them.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..utils.hashing import stable_u64

_U64 = (1 << 64) - 1

StreamKey = Union[int, str, bytes]


@dataclass(frozen=True)
class RngState:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _U64 and 0 <= self.stream_id <= _U64):
            raise ValueError(f"RngState words must be 64-bit unsigned, got ({self.seed}, {self.stream_id})")

    def split(self, key: StreamKey) -> "RngState":
        """Child stream identified by `key` (an int index, a name or raw bytes)."""
        return RngState(self.seed, stream_u64(self.stream_id, key))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.stream_id << 64) | self.seed))

    def uniform_open(self, size=None) -> np.ndarray:
        """Uniform draws in the open interval (0, 1)."""
        ints = self.generator().integers(1, 1 << 53, size=size, dtype=np.int64)
        return ints / float(1 << 53)


def stream_u64(parent_stream: int, key: StreamKey) -> int:
    return stable_u64(b"stream", parent_stream, key)


def root(seed: int) -> RngState:
    return RngState(int(seed) & _U64, 0)
