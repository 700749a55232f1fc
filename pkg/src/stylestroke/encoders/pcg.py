"""PCG32 (XSH-RR 64/32) generator, used so toy-encoder weights are reproducible anywhere."""

import numpy as np

_MULT = 6364136223846793005
_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
DEFAULT_STREAM = 54


class PCG32:
    """Minimal PCG32 with the reference ``pcg32_srandom_r(seed, stream)`` seeding."""

    def __init__(self, seed, stream=DEFAULT_STREAM):
        self.inc = ((int(stream) << 1) | 1) & _MASK64
        self.state = 0
        self.next_u32()
        self.state = (self.state + (int(seed) & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self):
        old = self.state
        self.state = (old * _MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def uniform(self, n):
        """``n`` floats in [0, 1), each ``u32 / 2**32``."""
        return np.array([self.next_u32() for _ in range(n)], dtype=np.float64) / 2.0**32
