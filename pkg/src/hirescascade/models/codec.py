"""Exactly invertible stand-in for a VAE: space-to-depth by 2 followed by a
fixed orthogonal channel mix."""

from __future__ import annotations

import numpy as np

from .. import rng
from ..errors import InvalidArgumentError

RGB_CHANNELS = 3
FACTOR = 2
LATENT_CHANNELS = RGB_CHANNELS * FACTOR * FACTOR


def _orthogonal(n: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.gaussian(seed, (n, n), 0xC0DEC))
    return q * np.sign(np.diag(r))


class ToyCodec:
    """``encode``: ``[3, ..., H, W] -> [12, ..., H/2, W/2]``; ``decode`` inverts it."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.mix = _orthogonal(LATENT_CHANNELS, seed)

    def encode(self, rgb) -> np.ndarray:
        x = np.asarray(rgb, dtype=np.float64)
        if x.shape[0] != RGB_CHANNELS:
            raise InvalidArgumentError(f"expected {RGB_CHANNELS} leading channels, got shape {x.shape}")
        h, w = x.shape[-2:]
        if h % FACTOR or w % FACTOR:
            raise InvalidArgumentError(f"spatial dims must be even, got {(h, w)}")
        mid = x.shape[1:-2]
        blocks = x.reshape((RGB_CHANNELS,) + mid + (h // FACTOR, FACTOR, w // FACTOR, FACTOR))
        nd = blocks.ndim
        # [c, *mid, h2, dy, w2, dx] -> [c, dy, dx, *mid, h2, w2]
        order = (0, nd - 3, nd - 1) + tuple(range(1, nd - 4)) + (nd - 4, nd - 2)
        depth = blocks.transpose(order).reshape((LATENT_CHANNELS,) + mid + (h // FACTOR, w // FACTOR))
        return np.tensordot(self.mix, depth, axes=(1, 0))

    def decode(self, latent) -> np.ndarray:
        z = np.asarray(latent, dtype=np.float64)
        if z.shape[0] != LATENT_CHANNELS:
            raise InvalidArgumentError(f"expected {LATENT_CHANNELS} latent channels, got shape {z.shape}")
        depth = np.tensordot(self.mix.T, z, axes=(1, 0))
        mid = z.shape[1:-2]
        h2, w2 = z.shape[-2:]
        blocks = depth.reshape((RGB_CHANNELS, FACTOR, FACTOR) + mid + (h2, w2))
        nd = blocks.ndim
        # [c, dy, dx, *mid, h2, w2] -> [c, *mid, h2, dy, w2, dx]
        order = (0,) + tuple(range(3, nd - 2)) + (nd - 2, 1, nd - 1, 2)
        return blocks.transpose(order).reshape((RGB_CHANNELS,) + mid + (h2 * FACTOR, w2 * FACTOR))


_default = None


def default_codec() -> ToyCodec:
    global _default
    if _default is None:
        _default = ToyCodec(0)
    return _default


def codec_encode(rgb) -> np.ndarray:
    return default_codec().encode(rgb)


def codec_decode(latent) -> np.ndarray:
    return default_codec().decode(latent)
