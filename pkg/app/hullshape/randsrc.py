"""
Deterministic, splittable supply of standard normal variates.

Every replication task gets its own stream. A stream is addressed by a
``SeedSpec(master_seed, stream_id)``; both fields are unsigned 64-bit integers.

Stream derivation
-----------------
The pair is folded into a single 64-bit key with the SplitMix64 finalizer::

    key = mix64(master_seed XOR mix64(stream_id XOR GOLDEN_GAMMA))

``mix64`` is a bijection on 64-bit words and XOR with a fixed word is a
bijection, so for a fixed master seed distinct stream ids always give
distinct keys. The key seeds a ``numpy.random.SeedSequence`` which drives a
PCG64 bit generator; normals come from numpy's ziggurat sampler.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Tuple, Union

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

Shape = Union[int, Tuple[int, ...]]


def mix64(x: int) -> int:
    """SplitMix64 finalizer (a permutation of the 64-bit words)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _check_u64(name: str, value: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer")
    value = int(value)
    if not 0 <= value <= MASK64:
        raise ValueError(f"{name} must fit in 64 unsigned bits, got {value}")
    return value


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "master_seed", _check_u64("master_seed", self.master_seed))
        object.__setattr__(self, "stream_id", _check_u64("stream_id", self.stream_id))

    @property
    def key(self) -> int:
        return mix64(self.master_seed ^ mix64(self.stream_id ^ GOLDEN_GAMMA))


def cell_stream_id(rep: int, n_index: int) -> int:
    """Stream id of one (replication, schedule cell); injective for indices below 2**32."""
    if not (0 <= rep < 1 << 32 and 0 <= n_index < 1 << 32):
        raise ValueError("rep and n_index must be in [0, 2**32)")
    return mix64((rep << 32) | n_index)


class VariateStream:
    """
    Handle over one stream of i.i.d. N(0, 1) variates.

    Array draws and iteration consume the same underlying sequence, so
    ``stream.standard_normal(5)`` equals the first five values of ``iter(stream)``
    on a fresh handle. Not safe to share between threads.
    """

    _BLOCK = 1024

    def __init__(self, seed: SeedSpec) -> None:
        self.seed = seed
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed.key)))

    def standard_normal(self, size: Shape) -> np.ndarray:
        return self._generator.standard_normal(size)

    def __iter__(self) -> Iterator[float]:
        while True:
            yield from self._generator.standard_normal(self._BLOCK).tolist()


def derive_stream(seed: SeedSpec) -> VariateStream:
    return VariateStream(seed)
