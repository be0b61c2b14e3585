"""Prompt tokens and region-wise condition routing for cross-attention."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng
from ..errors import InvalidArgumentError

PROMPT_TOKENS = 4


def prompt_indices(prompt: str, vocab: int) -> np.ndarray:
    """Four table rows picked by a hash of the prompt string."""
    return rng.generator(rng.string_seed(prompt), 0x7E47).integers(0, vocab, PROMPT_TOKENS)


def prompt_tokens(table: np.ndarray, prompt: str) -> np.ndarray:
    """``[4, cond_dim]`` condition tokens for ``prompt`` from an embedding table."""
    return table[prompt_indices(prompt, table.shape[0])]


def nearest_resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resample of a 2-D mask sampling cell centres."""
    mask = np.asarray(mask)
    mh, mw = mask.shape
    ys = np.minimum(((np.arange(height) + 0.5) * mh / height).astype(int), mh - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * mw / width).astype(int), mw - 1)
    return mask[np.ix_(ys, xs)]


@dataclass
class RegionConditioning:
    """Global condition tokens plus (mask, tokens) overrides.

    Masks are boolean, mutually disjoint and shaped to the latent grid they
    were built for; queries inside a mask attend to that region's tokens.
    """

    global_tokens: np.ndarray
    masks: list[np.ndarray] = field(default_factory=list)
    tokens: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.masks) != len(self.tokens):
            raise InvalidArgumentError("one token set per region mask is required")

    @property
    def shape(self) -> tuple[int, int] | None:
        return self.masks[0].shape if self.masks else None

    def token_sets(self) -> list[np.ndarray]:
        return [self.global_tokens, *self.tokens]

    def selector(self, height: int, width: int) -> np.ndarray:
        """Per-cell index into ``token_sets()`` on a ``height x width`` grid."""
        sel = np.zeros((height, width), dtype=np.intp)
        for i, m in enumerate(self.masks, start=1):
            sel[nearest_resize_mask(m, height, width).astype(bool)] = i
        return sel


def split_condition(cond) -> tuple[np.ndarray, RegionConditioning | None]:
    if isinstance(cond, RegionConditioning):
        return cond.global_tokens, cond
    return np.asarray(cond, dtype=np.float64), None
