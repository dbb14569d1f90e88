"""Counter-based, splittable random number generation.

Every stochastic draw in the package goes through :class:`SeededRng`.  The
generator is a Philox counter stream keyed by ``(seed, path)``; ``split``
derives an independent child stream from a key path, so per-sample draws do
not depend on the order in which samples are processed.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

_U24 = np.float32(2.0**-24)
_U53 = 2.0**-53


def _as_key(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    key = int(key)
    if key < 0:
        raise ValueError(f"rng keys must be non-negative, got {key}")
    return key


class SeededRng:
    """Deterministic generator: same seed and call sequence, same bits."""

    def __init__(self, seed: int, path: Sequence[int | str] = ()):
        self.seed = int(seed)
        self.path = tuple(_as_key(k) for k in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._bits = np.random.Philox(seq)

    def split(self, *keys: int | str) -> "SeededRng":
        """Child stream addressed by ``keys``; independent of the parent's position."""
        return SeededRng(self.seed, self.path + tuple(_as_key(k) for k in keys))

    def _raw(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        return self._bits.random_raw(n)

    def uniform(self, shape: Sequence[int] | int) -> np.ndarray:
        """Float32 uniforms in [0, 1) on a 2**-24 grid."""
        shape = _shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self._raw(n) >> np.uint64(40)).astype(np.float32) * _U24
        return u.reshape(shape)

    def uniform_scalar(self, low: float = 0.0, high: float = 1.0) -> float:
        u = float(self._raw(1)[0] >> np.uint64(11)) * _U53
        return low + (high - low) * u

    def normal(self, shape: Sequence[int] | int) -> np.ndarray:
        """Standard normal float32 draws via Box-Muller on the uniform stream."""
        shape = _shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs) >> np.uint64(11)
        u = raw.astype(np.float64) * _U53
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n].astype(np.float32).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        keys = self._raw(n)
        return np.argsort(keys, kind="stable")

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path})"


def _shape(shape: Sequence[int] | int) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if any(s < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return shape


def sample_gaussian(shape: Sequence[int] | int, rng: SeededRng) -> np.ndarray:
    return rng.normal(shape)


def sample_uniform(shape: Sequence[int] | int, rng: SeededRng) -> np.ndarray:
    return rng.uniform(shape)
