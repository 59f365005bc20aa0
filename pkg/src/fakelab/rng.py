"""Deterministic random number generation for data synthesis.

The dataset generator must emit identical bytes for identical seeds on every
platform, so it cannot lean on any library whose stream is an implementation
detail. SplitMix64 is small enough to write down completely: a 64-bit
counter stepped by a fixed increment, finalized by two xor-shift-multiply
rounds. Model-side randomness (weight init, shuffles) stays on numpy, where
same-platform determinism is all that's promised.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & MASK64
    z = (z ^ (z >> 27)) * _MIX2 & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """The SplitMix64 generator (Steele, Lea & Flood 2014)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return _mix(self.state)

    def next_float(self) -> float:
        """Uniform in [0, 1), using the top 53 bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def next_int(self, bound: int) -> int:
        """Uniform integer in [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return int(self.next_float() * bound)

    def choice(self, items):
        return items[self.next_int(len(items))]

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.next_int(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(root: int, *parts) -> int:
    """Fold a root seed and a label path into an independent stream seed.

    FNV-1a over the textual path mixes every byte into the accumulator, a
    SplitMix64 finalization round then spreads the result over all 64 bits
    so nearby (root, path) pairs land far apart.
    """
    acc = root & MASK64
    text = "/".join(str(p) for p in parts)
    for byte in text.encode("utf-8"):
        acc = ((acc ^ byte) * 0x100000001B3) & MASK64
    return _mix(acc)
