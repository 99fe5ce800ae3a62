"""Seeded standard-normal stream.

The generator is fully specified so other implementations can reproduce it
bit for bit:

* SplitMix64 expands the 64-bit user seed into four words ``w0..w3``.
* PCG64 (128-bit LCG, XSL-RR output) is loaded with
  ``state = (w0 << 64) | w1`` and ``inc = (((w2 << 64) | w3) << 1 | 1) mod 2**128``.
  Each draw advances the LCG then applies the output function.
* Uniforms use the top 53 bits: ``u1 = ((r >> 11) + 1) / 2**53`` in (0, 1]
  and ``u2 = (r >> 11) / 2**53`` in [0, 1).
* Box-Muller turns ``(u1, u2)`` into ``r*cos(2 pi u2), r*sin(2 pi u2)`` with
  ``r = sqrt(-2 ln u1)``; normals are emitted in that order, and an odd
  request discards the trailing sine value.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
MASK128 = (1 << 128) - 1
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(seed: int):
    """Yield the SplitMix64 sequence for ``seed`` (reduced mod 2**64)."""
    state = seed & MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Child seed ``index`` of ``seed``: the ``index``-th SplitMix64 output."""
    if index < 0:
        raise ValueError("index must be non-negative")
    gen = splitmix64(seed)
    for _ in range(index):
        next(gen)
    return next(gen)


class NormalStream:
    """Reproducible N(0, 1) draws from a 64-bit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        w0, w1, w2, w3 = (v for v, _ in zip(splitmix64(self.seed), range(4)))
        state = (w0 << 64) | w1
        inc = ((((w2 << 64) | w3) << 1) | 1) & MASK128
        self._bits = np.random.PCG64()
        self._bits.state = {
            "bit_generator": "PCG64",
            "state": {"state": state, "inc": inc},
            "has_uint32": 0,
            "uinteger": 0,
        }

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n)

    def uniform_pairs(self, npairs: int) -> tuple[np.ndarray, np.ndarray]:
        raw = self.raw(2 * npairs).reshape(npairs, 2) >> np.uint64(11)
        u1 = (raw[:, 0].astype(np.float64) + 1.0) * _INV_2_53
        u2 = raw[:, 1].astype(np.float64) * _INV_2_53
        return u1, u2

    def standard_normal(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        npairs = (n + 1) // 2
        u1, u2 = self.uniform_pairs(npairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = _TWO_PI * u2
        out = np.empty(2 * npairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]
