"""SplitMix64 stream used for all environment stochasticity.

The whole generator state is one u64, which keeps the canonical state
encoding small and makes rollouts a pure function of the seed. The update
and output functions follow the widely used splitmix64 reference constants.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def seed_state(seed: int) -> int:
    """Map a non-negative seed onto an initial u64 state."""
    if seed < 0:
        raise ValueError("seed must be >= 0")
    return (seed * 0x2545F4914F6CDD1D + 0x1234567) & _MASK


def next_u64(state: int) -> tuple[int, int]:
    """Advance the stream; returns (new_state, output)."""
    state = (state + _GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def next_below(state: int, n: int) -> tuple[int, int]:
    """Uniform draw in [0, n) with rejection sampling (no modulo bias)."""
    if n <= 0:
        raise ValueError("n must be positive")
    bound = ((1 << 64) // n) * n
    while True:
        state, value = next_u64(state)
        if value < bound:
            return state, value % n


def derive_seed(base: int, qualifier: str) -> int:
    """Stable per-purpose sub-seed; never uses Python's randomized hash()."""
    digest = hashlib.sha256(f"{base}/{qualifier}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
