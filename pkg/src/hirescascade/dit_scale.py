"""Rotary embeddings with NTK base scaling and the attention temperature
used when a transformer denoiser runs on more tokens than it was trained on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "RopeConfig",
    "rope_angles",
    "apply_rope",
    "ntk_lambda",
    "attention_temperature",
    "rope_tables",
]


def rope_angles(n, base: float = 10000.0, lam: float = 1.0, d: int = 64) -> np.ndarray:
    """Angles ``n / (lam * base) ** (2j / d)`` for ``j < d/2``.

    ``n`` may be an array of positions, in which case a trailing axis of
    length ``d/2`` is appended.
    """
    if int(d) != d or d < 2 or d % 2:
        raise InvalidArgumentError(f"rotary dimension must be even and >= 2, got {d}")
    j = np.arange(d // 2, dtype=np.float64)
    inv_freq = 1.0 / (lam * base) ** (2.0 * j / d)
    return np.multiply.outer(np.asarray(n, dtype=np.float64), inv_freq)


def apply_rope(vec, angles) -> np.ndarray:
    """Rotate each pair ``(v[2j], v[2j+1])`` by ``angles[j]``."""
    v = np.asarray(vec, dtype=np.float64)
    a = np.asarray(angles, dtype=np.float64)
    if v.shape[-1] % 2 or a.shape[-1] != v.shape[-1] // 2:
        raise InvalidArgumentError(f"need {v.shape[-1] // 2} angles for a length-{v.shape[-1]} vector, got {a.shape[-1]}")
    c, s = np.cos(a), np.sin(a)
    out = np.empty(np.broadcast_shapes(v.shape, a.shape[:-1] + (v.shape[-1],)))
    out[..., 0::2] = v[..., 0::2] * c - v[..., 1::2] * s
    out[..., 1::2] = v[..., 0::2] * s + v[..., 1::2] * c
    return out


def ntk_lambda(train_len: int, target_len: int, d: int) -> float:
    """NTK base factor ``max(1, (target/train) ** (d / (d - 2)))``."""
    if train_len < 1 or target_len < 1:
        raise InvalidArgumentError("lengths must be >= 1")
    if d <= 2:
        raise InvalidArgumentError(f"rotary dimension must be > 2 for NTK scaling, got {d}")
    return max(1.0, (target_len / train_len) ** (d / (d - 2)))


def attention_temperature(train_tokens: int, target_tokens: int) -> float:
    """``max(1, sqrt(ln(target) / ln(train)))``."""
    if train_tokens < 2 or target_tokens < 2:
        raise InvalidArgumentError("token counts must be >= 2")
    return max(1.0, math.sqrt(math.log(target_tokens) / math.log(train_tokens)))


@dataclass(frozen=True)
class RopeConfig:
    """Per-axis rotary layout for (frame, height, width) token coordinates."""

    axis_dims: tuple[int, ...] = (4, 14, 14)
    base: float = 10000.0
    lambdas: tuple[float, ...] = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        if len(self.lambdas) != len(self.axis_dims):
            raise InvalidArgumentError("one lambda per rotary axis is required")
        for d in self.axis_dims:
            if d % 2 or d < 2:
                raise InvalidArgumentError(f"per-axis rotary dims must be even, got {self.axis_dims}")
        if any(lam < 1 for lam in self.lambdas):
            raise InvalidArgumentError(f"lambda must be >= 1, got {self.lambdas}")

    @property
    def head_dim(self) -> int:
        return sum(self.axis_dims)

    @classmethod
    def ntk(cls, axis_dims, train_extent, target_extent, base: float = 10000.0) -> "RopeConfig":
        """Per-axis lambda from each axis's own extent ratio."""
        lambdas = tuple(
            ntk_lambda(tr, tg, d) if d > 2 else 1.0
            for d, tr, tg in zip(axis_dims, train_extent, target_extent)
        )
        return cls(tuple(axis_dims), base, lambdas)


def rope_tables(coords: np.ndarray, cfg: RopeConfig) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables ``[N, head_dim/2]`` for integer coordinates ``[N, axes]``."""
    coords = np.asarray(coords)
    if coords.shape[-1] != len(cfg.axis_dims):
        raise InvalidArgumentError(f"coordinates have {coords.shape[-1]} axes, config has {len(cfg.axis_dims)}")
    angles = np.concatenate(
        [rope_angles(coords[:, a], cfg.base, cfg.lambdas[a], d) for a, d in enumerate(cfg.axis_dims)],
        axis=-1,
    )
    return np.cos(angles), np.sin(angles)
