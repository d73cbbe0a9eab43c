"""SplitMix64 generator and seed mixing.

All randomness in the package flows through these helpers so that outputs
are reproducible across platforms and independent of numpy's generators.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, index: int) -> int:
    """Per-row seed: finalize(master_seed XOR index * golden gamma)."""
    return splitmix64_finalize((master_seed & MASK64) ^ ((index * GOLDEN_GAMMA) & MASK64))


class SplitMix64:
    """Scalar SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return splitmix64_finalize(self.state)

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow requires n > 0")
        # Rejection sampling removes modulo bias.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def sign(self) -> int:
        return 1 if self.next_u64() >> 63 else -1


def uniform_block(seed: int, count: int, chunk: int = 1 << 20) -> np.ndarray:
    """``count`` floats in [0, 1) equal to ``count`` successive SplitMix64.uniform() draws.

    Vectorized over uint64 (numpy wraps modulo 2**64), chunked to bound memory.
    """
    out = np.empty(count, dtype=np.float64)
    gamma = np.uint64(GOLDEN_GAMMA)
    base = np.uint64(seed & MASK64)
    with np.errstate(over="ignore"):
        for start in range(0, count, chunk):
            stop = min(count, start + chunk)
            k = np.arange(start + 1, stop + 1, dtype=np.uint64)
            z = base + k * gamma
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            out[start:stop] = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return out
