"""Seeded random streams.

All randomness in the package goes through this module. Uniform bits come
from numpy's Philox4x64 counter-based generator keyed by a ``SeedSequence``
built from ``(seed, *stream)``; Gaussian samples are produced from those
uniforms with the Box-Muller transform, so values depend only on the seed
and stream id, never on thread scheduling or call order elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np


def generator(seed: int, *stream: int) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *stream)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(ss))


def gaussian(seed: int, shape, *stream: int) -> np.ndarray:
    """Standard normal samples via Box-Muller over Philox uniforms."""
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    gen = generator(seed, *stream)
    u1 = 1.0 - gen.random(pairs)  # (0, 1]
    u2 = gen.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n].reshape(shape)


def uniform(seed: int, shape, low: float, high: float, *stream: int) -> np.ndarray:
    return generator(seed, *stream).uniform(low, high, size=shape)


def string_seed(text: str) -> int:
    """Stable 63-bit integer derived from a string (sha256 prefix)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF
