"""UNet-side adaptations for sampling above the training resolution:
restrained dilation, shifted-crop local self-attention and the frequency
split that fuses local and global attention outputs.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .tensor_ops import (
    FrequencyFilter,
    PatchGrid,
    extract_patches,
    gaussian_lowpass,
    reconstruct_patches,
    softmax_scaled,
)

BLOCK_IDS = ("down.0", "down.1", "mid", "up.0", "up.1")
DEFAULT_DILATED_BLOCKS = frozenset({"down.0", "down.1", "mid"})
ATTENTION_MODES = ("global", "local", "fused")


@dataclass(frozen=True)
class DilationPolicy:
    factor: int = 1
    allowed_blocks: frozenset = DEFAULT_DILATED_BLOCKS
    disable_tail_fraction: float = 0.25

    def __post_init__(self):
        if int(self.factor) != self.factor or self.factor < 1:
            raise InvalidArgumentError(f"dilation factor must be a positive integer, got {self.factor}")
        if not 0 <= self.disable_tail_fraction < 1:
            raise InvalidArgumentError("disable_tail_fraction must lie in [0, 1)")
        unknown = set(self.allowed_blocks) - set(BLOCK_IDS)
        if unknown:
            raise InvalidArgumentError(f"unknown block ids {sorted(unknown)}")
        # up-blocks are never dilated, whatever the caller asked for
        object.__setattr__(
            self, "allowed_blocks", frozenset(b for b in self.allowed_blocks if not b.startswith("up."))
        )

    @classmethod
    def for_level(cls, level: float, **kw) -> "DilationPolicy":
        return cls(factor=max(1, int(round(level))), **kw)


def dilation_for(policy: DilationPolicy | None, block_id: str, step_index: int, total_steps: int) -> int:
    """Dilation to use in ``block_id`` at stage-local step ``step_index``.

    The last ``ceil(disable_tail_fraction * total_steps)`` steps of a stage
    run undilated, as do all up-blocks.
    """
    if block_id not in BLOCK_IDS:
        raise InvalidArgumentError(f"unknown block id {block_id!r}")
    if policy is None or block_id not in policy.allowed_blocks:
        return 1
    tail = math.ceil(policy.disable_tail_fraction * total_steps)
    if step_index >= total_steps - tail:
        return 1
    return int(policy.factor)


def _tokens(h: np.ndarray) -> np.ndarray:
    return h.reshape(h.shape[0], -1).T


def attention_global(h_in: np.ndarray, weights: dict, temperature: float = 1.0) -> np.ndarray:
    """Single-head self-attention over all spatial cells of ``[C, H, W]``.

    ``weights`` holds ``q``, ``k``, ``v`` matrices shaped ``[C, C]``.
    """
    h_in = np.asarray(h_in, dtype=np.float64)
    if h_in.ndim != 3:
        raise InvalidArgumentError(f"expected [C, H, W], got {h_in.shape}")
    x = _tokens(h_in)
    q = x @ weights["q"].T
    k = x @ weights["k"].T
    v = x @ weights["v"].T
    p = softmax_scaled(q @ k.T, temperature, q.shape[-1])
    return (p @ v).T.reshape(v.shape[-1], *h_in.shape[1:])


def attention_local(h_in: np.ndarray, grid: PatchGrid, weights: dict, executor: Executor | None = None) -> np.ndarray:
    """Self-attention applied independently per crop, overlaps averaged."""
    h_in = np.asarray(h_in, dtype=np.float64)
    patches = extract_patches(h_in, grid)
    if executor is None:
        outs = [attention_global(p, weights) for p in patches]
    else:
        outs = list(executor.map(lambda p: attention_global(p, weights), patches))
    return reconstruct_patches(outs, grid, (weights["v"].shape[0],) + h_in.shape[1:])


def scale_fuse(h_global, h_local, f: FrequencyFilter | float) -> np.ndarray:
    """High band of the global output plus low band of the local output."""
    h_global = np.asarray(h_global, dtype=np.float64)
    h_local = np.asarray(h_local, dtype=np.float64)
    if h_global.shape != h_local.shape:
        raise InvalidArgumentError(f"shape mismatch {h_global.shape} vs {h_local.shape}")
    if h_local is h_global or np.array_equal(h_local, h_global):
        return h_global.copy()
    return (h_global - gaussian_lowpass(h_global, f)) + gaussian_lowpass(h_local, f)


@dataclass(frozen=True)
class FusionConfig:
    """Local-attention crops sized to the training map of each block."""

    sigma: float = 1.0
    mode: str = "fused"
    stride_ratio: float = 0.5

    def __post_init__(self):
        if self.mode not in ATTENTION_MODES:
            raise InvalidArgumentError(f"attention mode must be one of {ATTENTION_MODES}, got {self.mode!r}")
        FrequencyFilter(self.sigma)
        if not 0 < self.stride_ratio <= 1:
            raise InvalidArgumentError("stride_ratio must lie in (0, 1]")

    def grid(self, window: tuple[int, int]) -> PatchGrid:
        stride = tuple(max(1, int(round(w * self.stride_ratio))) for w in window)
        return PatchGrid(tuple(window), stride)


@dataclass
class ScaleHooks:
    """Hook object consulted by UNet-style denoisers.

    With ``policy=None`` and ``fusion=None`` every query returns the plain
    behaviour (no dilation, global attention). ``log`` records the dilation
    each block used at each step.
    """

    policy: DilationPolicy | None = None
    fusion: FusionConfig | None = None
    step_index: int = 0
    total_steps: int = 1
    executor: Executor | None = None
    log: list = field(default_factory=list)

    def set_step(self, step_index: int, total_steps: int) -> None:
        self.step_index = step_index
        self.total_steps = total_steps

    def conv_dilation(self, block_id: str) -> int:
        d = dilation_for(self.policy, block_id, self.step_index, self.total_steps)
        self.log.append((self.step_index, block_id, d))
        return d

    def self_attention(self, block_id: str, h: np.ndarray, weights: dict, native_hw: tuple[int, int]) -> np.ndarray:
        mode = "global" if self.fusion is None else self.fusion.mode
        height, width = h.shape[-2:]
        window = (min(native_hw[0], height), min(native_hw[1], width))
        if mode == "global" or window == (height, width):
            return attention_global(h, weights)
        grid = self.fusion.grid(window)
        local = attention_local(h, grid, weights, self.executor)
        if mode == "local":
            return local
        return scale_fuse(attention_global(h, weights), local, self.fusion.sigma)
