"""Fixed 64-bit pseudo-random generator for reproducible scenarios.

This is the SplitMix64 sequence (Steele, Lea & Flood's 64-bit mixer): the
state advances by the golden-gamma constant and is finalized by two
xor-shift-multiply rounds. It is implemented here rather than taken from a
platform RNG so that generated scenario stores are byte-identical across
interpreter versions and platforms. The algorithm is documented in
docs/formats.md and pinned by known-answer tests.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    """FNV-1a hash, used to derive independent substreams from labels."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


class SplitMix64:
    """Deterministic 64-bit generator; one instance per substream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def next_symmetric(self) -> float:
        """Uniform in [-1, 1)."""
        return self.next_float() * 2.0 - 1.0

    def substream(self, label: str) -> "SplitMix64":
        """Independent generator derived from this seed and a label."""
        return SplitMix64(self.state ^ fnv1a64(label))
