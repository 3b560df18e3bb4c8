"""Deterministic random numbers from a counter-based 64-bit generator.

The generator is SplitMix64: output(i) = mix(seed + i * GAMMA) where mix is
the standard xor-shift/multiply finalizer and GAMMA is the 64-bit golden
ratio increment.  Because the state is just a counter, a block of n draws can
be produced with vectorized uint64 arithmetic and is bit-identical to n
scalar calls.

Gaussian variates use the basic Box-Muller transform: u1 in (0, 1],
u2 in [0, 1), r = sqrt(-2 ln u1), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2).
A request for k gaussians consumes exactly 2 * ceil(k / 2) raw draws; no
spare value is cached across calls, so call boundaries never shift the
stream.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO53 = float(1 << 53)


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_block(z):
    # vectorized copy of _mix64 on a uint64 array; uint64 ops wrap mod 2^64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def derive(seed: int, *tags: int) -> int:
    """Fold integer tags into a seed to get an independent stream seed."""
    z = seed & _MASK64
    for t in tags:
        z = _mix64((z + _GAMMA + (t & _MASK64)) & _MASK64)
    return z


class SplitMix64:
    """Counter-based PRNG; the whole state is one 64-bit counter."""

    def __init__(self, seed: int):
        self._counter = seed & _MASK64

    def get_state(self) -> int:
        return self._counter

    def set_state(self, counter: int) -> None:
        self._counter = counter & _MASK64

    def next_u64(self) -> int:
        self._counter = (self._counter + _GAMMA) & _MASK64
        return _mix64(self._counter)

    def u64_block(self, n: int):
        """n raw draws as a uint64 array, advancing the counter by n."""
        if n < 0:
            raise ValueError("draw count must be nonnegative")
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA)
            block = _mix64_block(idx + np.uint64(self._counter))
        self._counter = (self._counter + n * _GAMMA) & _MASK64
        return block

    def uniform(self) -> float:
        """One float in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) / _TWO53

    def uniforms(self, n: int):
        return np.asarray(self.u64_block(n) >> np.uint64(11), dtype=np.float64) / _TWO53

    def normals(self, shape) -> np.ndarray:
        """Standard gaussians via Box-Muller, shaped float64 array."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        k = int(np.prod(shape)) if shape else 1
        pairs = (k + 1) // 2
        raw = self.u64_block(2 * pairs)
        # u1 in (0, 1] so the log is always finite
        u1 = (np.asarray(raw[:pairs] >> np.uint64(11), dtype=np.float64) + 1.0) / _TWO53
        u2 = np.asarray(raw[pairs:] >> np.uint64(11), dtype=np.float64) / _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:k].reshape(shape)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection on the top of the range."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        return items[self.below(len(items))]
