"""SplitMix64: the seeded generator behind every random draw in the package.

Chosen because its whole definition fits in a few lines, so the streams can be
reproduced bit for bit in any language::

    state += 0x9E3779B97F4A7C15                      (mod 2**64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9         (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB         (mod 2**64)
    return z ^ (z >> 31)

Derived quantities:

* uniform double in [0, 1):  ``(next() >> 11) * 2**-53``
* standard normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 ln(1 - u1))``, yielding ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``
* ``spawn(key)``: a child generator seeded with ``mix(seed ^ mix(key))``, where
  ``mix`` is the output function above applied to ``key + 0x9E3779B97F4A7C15``
  and string keys are first folded to 64 bits with FNV-1a.

Test vectors (seed 0): 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SplitMix64", "mix64"]

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """One SplitMix64 output step for state ``value`` (already advanced)."""
    z = value & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode():
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class SplitMix64:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.state = self.seed

    def next_u64(self, n: int | None = None):
        """Next raw output, or an array of the next ``n`` outputs."""
        if n is None:
            self.state = (self.state + GOLDEN) & _MASK
            return mix64(self.state)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN)
            out = _mix_array(np.uint64(self.state) + steps)
        self.state = (self.state + n * GOLDEN) & _MASK
        return out

    def random(self, size=None):
        """Uniform doubles on [0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, lo: float, hi: float, size):
        return lo + (hi - lo) * self.random(size)

    def normal(self, mean: float, sd: float, size):
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        t = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(t), r * np.sin(t)], axis=1).ravel()[:n]
        return mean + sd * z.reshape(size)

    def spawn(self, key: int | str) -> "SplitMix64":
        k = _fnv1a(key) if isinstance(key, str) else int(key) & _MASK
        return SplitMix64(mix64((self.seed ^ mix64((k + GOLDEN) & _MASK)) + GOLDEN))
