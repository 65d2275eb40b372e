"""SplitMix64 pseudorandom generator (Steele, Lea & Flood 2014).

Counter-based, so blocks of outputs are produced with vectorized uint64
arithmetic. Reference: seed 1234567 yields 6457827717110365317,
3203168211198807973, 9817491932198370423.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self, n):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * np.uint64(_GAMMA)
        self.state = (self.state + n * _GAMMA) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def random(self, n):
        """``n`` doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self, low, high, n):
        return low + (high - low) * self.random(n)

    def normal(self, n, mean=0.0, sd=1.0):
        """Box-Muller, one variate per pair of uniforms."""
        u = self.random(2 * n)
        u1, u2 = 1.0 - u[0::2], u[1::2]
        return mean + sd * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, high, n):
        """``n`` integers in ``[0, high)``."""
        return np.minimum((self.random(n) * high).astype(np.int64), high - 1)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        u = self.random(max(n - 1, 0))
        for step, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[step] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
