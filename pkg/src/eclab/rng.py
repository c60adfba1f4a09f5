"""Seeded random streams on a counter-based generator.

Every consumer (data sampling, gumbel noise, init, ...) owns its own
(seed, stream) pair, so adding draws to one consumer never perturbs the
others.  Philox is pure integer arithmetic, so identical (seed, stream)
gives identical sequences on every platform.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_id(tag: str | int) -> int:
    """Map an arbitrary tag to a stable 64-bit stream id."""
    if isinstance(tag, int):
        return tag & _MASK64
    digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Prng:
    def __init__(self, seed: int, stream: str | int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = stream_id(stream)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def child(self, tag: str | int) -> "Prng":
        """Derive an independent stream from this one, keyed by `tag`."""
        mixed = hashlib.blake2s(
            f"{self.stream}/{tag}".encode("utf-8"), digest_size=8
        ).digest()
        return Prng(self.seed, int.from_bytes(mixed, "little"))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size)

    def integers(self, high: int, size=None) -> np.ndarray:
        """Uniform integers in [0, high)."""
        return self._gen.integers(0, high, size=size)

    def choice(self, n, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n) -> np.ndarray:
        return self._gen.permutation(n)

    def gumbel(self, shape, eps: float = 1e-12) -> np.ndarray:
        """Standard Gumbel noise -log(-log u), with u clamped to [eps, 1-eps]."""
        u = np.clip(self._gen.random(shape), eps, 1.0 - eps)
        return -np.log(-np.log(u))

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """Draw one index per row of `probs` (rows sum to 1)."""
        probs = np.asarray(probs, dtype=np.float64)
        cum = np.cumsum(probs, axis=-1)
        cum /= cum[..., -1:]
        u = self._gen.random(probs.shape[:-1] + (1,))
        idx = (cum < u).sum(axis=-1)
        return np.minimum(idx, probs.shape[-1] - 1)
