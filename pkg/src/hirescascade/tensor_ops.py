"""Deterministic numerical kernels: resampling, filtering, dilated
convolution, patch geometry and scaled softmax.

Arrays are channel-first with the two spatial axes last, i.e. ``[C, H, W]``
or ``[C, F, H, W]``; any leading axes are carried through untouched. All
arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "LatentTensor",
    "PatchGrid",
    "FrequencyFilter",
    "upsample_bilinear",
    "downsample_area",
    "gaussian_kernel",
    "gaussian_lowpass",
    "conv2d_dilated",
    "extract_patches",
    "reconstruct_patches",
    "softmax_scaled",
]


@dataclass(frozen=True)
class LatentTensor:
    """A latent array tagged with its resolution level (1 = training size)."""

    data: np.ndarray
    level: int = 1

    def __post_init__(self):
        if self.level < 1:
            raise InvalidArgumentError(f"level must be >= 1, got {self.level}")
        if self.data.ndim < 3 or self.data.shape[-1] < 1 or self.data.shape[-2] < 1:
            raise InvalidArgumentError(f"latent must be [C, (F,) H, W], got shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def spatial(self) -> tuple[int, int]:
        return self.data.shape[-2], self.data.shape[-1]


@dataclass(frozen=True)
class PatchGrid:
    """Sliding window of size ``window`` moved by ``stride`` over (H, W)."""

    window: tuple[int, int]
    stride: tuple[int, int]

    def offsets(self, height: int, width: int) -> list[tuple[int, int]]:
        """Top-left corners in row-major order; raises on inexact tiling."""
        axes = []
        for name, extent, win, step in (
            ("height", height, self.window[0], self.stride[0]),
            ("width", width, self.window[1], self.stride[1]),
        ):
            if win < 1 or step < 1:
                raise InvalidArgumentError(f"{name}: window and stride must be positive")
            if win > extent:
                raise InvalidArgumentError(f"{name}: window {win} exceeds extent {extent}")
            if (extent - win) % step:
                raise InvalidArgumentError(
                    f"{name}: (extent - window) = {extent - win} not divisible by stride {step}"
                )
            axes.append(range(0, extent - win + 1, step))
        return [(y, x) for y in axes[0] for x in axes[1]]

    def count(self, height: int, width: int) -> int:
        return len(self.offsets(height, width))


@dataclass(frozen=True)
class FrequencyFilter:
    """Gaussian low-pass with standard deviation ``sigma`` in cells."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be > 0, got {self.sigma}")

    @property
    def radius(self) -> int:
        return math.ceil(3.0 * self.sigma)


def _unwrap(x):
    if isinstance(x, LatentTensor):
        return x.data, x.level
    return np.asarray(x, dtype=np.float64), None


def _resample_axis(a: np.ndarray, axis: int, scale: int) -> np.ndarray:
    n = a.shape[axis]
    coord = (np.arange(n * scale) + 0.5) / scale - 0.5
    coord = np.clip(coord, 0.0, n - 1)
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    w = coord - lo
    shape = [1] * a.ndim
    shape[axis] = -1
    w = w.reshape(shape)
    return np.take(a, lo, axis=axis) * (1.0 - w) + np.take(a, hi, axis=axis) * w


def upsample_bilinear(x, scale: int):
    """Bilinear upsampling of the two trailing axes by an integer factor.

    Output cell ``i`` samples input coordinate ``(i + 0.5) / scale - 0.5``,
    clamped to the edge. A ``LatentTensor`` input has its level multiplied
    by ``scale``; a bare array is returned as an array.
    """
    if int(scale) != scale or scale < 1:
        raise InvalidArgumentError(f"scale must be a positive integer, got {scale}")
    scale = int(scale)
    data, level = _unwrap(x)
    if scale == 1:
        out = data.copy()
    else:
        out = _resample_axis(_resample_axis(data, -2, scale), -1, scale)
    if level is None:
        return out
    return LatentTensor(out, level * scale)


def downsample_area(x: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor x factor`` blocks."""
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise InvalidArgumentError(f"spatial dims {(h, w)} not divisible by {factor}")
    blocks = x.reshape(*x.shape[:-2], h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized symmetric 1-D Gaussian with radius ``ceil(3 sigma)``."""
    f = FrequencyFilter(sigma)
    r = f.radius
    taps = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (taps / sigma) ** 2)
    k = k / k.sum()
    # force exact symmetry after normalization
    return 0.5 * (k + k[::-1])


def _filter_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    padded = np.pad(a, pad, mode="reflect") if a.shape[axis] > 1 else np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, weight in enumerate(kernel):
        out += weight * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_lowpass(x, f: FrequencyFilter | float):
    """Separable Gaussian blur over the two trailing axes, reflect padding."""
    sigma = f.sigma if isinstance(f, FrequencyFilter) else float(f)
    kernel = gaussian_kernel(sigma)
    data, level = _unwrap(x)
    out = _filter_axis(_filter_axis(data, kernel, -2), kernel, -1)
    return out if level is None else LatentTensor(out, level)


def conv2d_dilated(x: np.ndarray, kernel: np.ndarray, d: int = 1, bias: np.ndarray | None = None) -> np.ndarray:
    """Zero-padded 'same' cross-correlation with a kernel dilated by ``d``.

    ``x`` is ``[..., C_in, H, W]`` and ``kernel`` is ``[C_out, C_in, k, k]``
    with odd ``k``. Kernel tap ``(i, j)`` reads the input at offset
    ``(d * (i - k//2), d * (j - k//2))``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise InvalidArgumentError(f"kernel must be [C_out, C_in, k, k], got {kernel.shape}")
    k = kernel.shape[-1]
    if k % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd, got {k}")
    if int(d) != d or d < 1:
        raise InvalidArgumentError(f"dilation must be a positive integer, got {d}")
    if x.shape[-3] != kernel.shape[1]:
        raise InvalidArgumentError(f"input has {x.shape[-3]} channels, kernel expects {kernel.shape[1]}")
    d = int(d)
    h, w = x.shape[-2:]
    p = d * (k // 2)
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    xp = np.pad(x, pad)
    out = np.zeros(x.shape[:-3] + (kernel.shape[0], h, w))
    for i in range(k):
        for j in range(k):
            window = xp[..., i * d : i * d + h, j * d : j * d + w]
            out += np.einsum("oc,...chw->...ohw", kernel[:, :, i, j], window)
    if bias is not None:
        out += np.asarray(bias)[:, None, None]
    return out


def extract_patches(x, grid: PatchGrid) -> list[np.ndarray]:
    """Crop windows in row-major order (top-left first)."""
    data, _ = _unwrap(x)
    h, w = data.shape[-2:]
    wh, ww = grid.window
    return [data[..., y : y + wh, x0 : x0 + ww].copy() for y, x0 in grid.offsets(h, w)]


def reconstruct_patches(patches: Sequence[np.ndarray], grid: PatchGrid, target_shape) -> np.ndarray:
    """Place patches back and average where they overlap.

    Accumulation runs in the fixed row-major patch order regardless of how
    the patches were produced.
    """
    target_shape = tuple(target_shape)
    offsets = grid.offsets(target_shape[-2], target_shape[-1])
    if len(patches) != len(offsets):
        raise InvalidArgumentError(f"expected {len(offsets)} patches, got {len(patches)}")
    acc = np.zeros(target_shape)
    hits = np.zeros(target_shape[-2:])
    wh, ww = grid.window
    for patch, (y, x0) in zip(patches, offsets):
        acc[..., y : y + wh, x0 : x0 + ww] += patch
        hits[y : y + wh, x0 : x0 + ww] += 1.0
    return acc / hits


def softmax_scaled(scores, temperature: float = 1.0, scale: float = 1.0) -> np.ndarray:
    """``softmax(scores / (temperature * sqrt(scale)))`` over the last axis."""
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {temperature}")
    if not scale > 0:
        raise InvalidArgumentError(f"scale must be > 0, got {scale}")
    s = np.asarray(scores, dtype=np.float64) / (temperature * math.sqrt(scale))
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)
