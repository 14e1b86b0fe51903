"""SplitMix64 generator used wherever a frozen, documented random trace is required.

The random-crop start index and the speaker shuffle are part of the
reproducibility contract, so they use this generator rather than numpy's
(whose bit stream is not guaranteed across versions).
"""

MASK64 = (1 << 64) - 1


class SplitMix64:
    """64-bit SplitMix generator (Steele et al. gamma = 0x9E3779B97F4A7C15)."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by modular reduction (documented contract)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, drawing j = next_u64 % (i + 1) for i = len-1 .. 1."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def combine_seed(global_seed: int, index: int) -> int:
    """Per-item seed for (global_seed, file_index) streams."""
    return ((global_seed & MASK64) * 0x100000001B3 + index + 1) & MASK64
