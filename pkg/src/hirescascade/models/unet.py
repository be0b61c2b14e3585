"""Tiny image UNet with dilation and self-attention hook points."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng
from ..errors import InvalidArgumentError
from ..tensor_ops import conv2d_dilated, softmax_scaled
from ..unet_scale import attention_global
from .conditioning import prompt_tokens, split_condition


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 12
    widths: tuple[int, int] = (8, 16)
    groups: int = 4
    cond_dim: int = 16
    time_dim: int = 16
    vocab: int = 32
    train_size: tuple[int, int] = (16, 16)


# block id -> (in channels, out channels, downsample factor)
def _block_layout(cfg: UNetConfig):
    c0, c1 = cfg.widths
    return {
        "down.0": (cfg.in_channels, c0, 1),
        "down.1": (c0, c1, 2),
        "mid": (c1, c1, 4),
        "up.0": (c1 + c1, c1, 2),
        "up.1": (c1 + c0, c0, 1),
    }


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """``[sin(t f_i), cos(t f_i)]`` with geometric frequencies; ``t`` may be an array."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.multiply.outer(np.asarray(t, dtype=np.float64), freqs)
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def init_uniform(seed: int, name: str, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(seed, shape, -bound, bound, rng.string_seed(name))


def group_norm(h: np.ndarray, groups: int, eps: float = 1e-5) -> np.ndarray:
    c = h.shape[0]
    g = h.reshape(groups, c // groups, -1)
    mu = g.mean(axis=(1, 2), keepdims=True)
    var = g.var(axis=(1, 2), keepdims=True)
    return ((g - mu) / np.sqrt(var + eps)).reshape(h.shape)


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def avg_pool2(h: np.ndarray) -> np.ndarray:
    c, height, width = h.shape
    return h.reshape(c, height // 2, 2, width // 2, 2).mean(axis=(2, 4))


def upsample_nearest2(h: np.ndarray) -> np.ndarray:
    return h.repeat(2, axis=-2).repeat(2, axis=-1)


def cross_attention(h: np.ndarray, cond, weights: dict) -> np.ndarray:
    """Cross-attention from spatial cells to condition tokens.

    ``cond`` is a ``[tokens, cond_dim]`` array or a ``RegionConditioning``;
    in the latter case each cell attends to its own region's tokens.
    """
    _, region = split_condition(cond)
    x = h.reshape(h.shape[0], -1).T
    q = x @ weights["q"].T

    def attend(tokens):
        k = tokens @ weights["k"].T
        v = tokens @ weights["v"].T
        return softmax_scaled(q @ k.T, 1.0, q.shape[-1]) @ v

    if region is None:
        out = attend(np.asarray(cond, dtype=np.float64))
    else:
        sel = region.selector(*h.shape[-2:]).reshape(-1)
        sets = region.token_sets()
        out = attend(sets[0])
        for i in range(1, len(sets)):
            if np.any(sel == i):
                out = np.where((sel == i)[:, None], attend(sets[i]), out)
    return out.T.reshape(h.shape)


class TinyUNet:
    """Two-level UNet over ``[C, H, W]`` latents.

    Blocks ``down.0``, ``down.1``, ``mid``, ``up.0``, ``up.1`` each run a
    3x3 convolution (dilation from hooks), group norm + SiLU, residual
    self-attention (mode from hooks) and residual cross-attention.
    """

    kind = "unet"

    def __init__(self, config: UNetConfig | None = None, params: dict | None = None, seed: int = 0):
        self.config = config or UNetConfig()
        if any(w % self.config.groups for w in self.config.widths):
            raise InvalidArgumentError("widths must be divisible by groups")
        self.params = params if params is not None else self.init_params(seed)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg = self.config
        p: dict[str, np.ndarray] = {}

        def u(name, shape, fan_in):
            p[name] = init_uniform(seed, name, shape, fan_in)

        u("time.w", (cfg.time_dim, cfg.time_dim), cfg.time_dim)
        p["time.b"] = np.zeros(cfg.time_dim)
        for b, (ci, co, _) in _block_layout(cfg).items():
            u(f"{b}.conv.w", (co, ci, 3, 3), ci * 9)
            p[f"{b}.conv.b"] = np.zeros(co)
            u(f"{b}.time.w", (co, cfg.time_dim), cfg.time_dim)
            p[f"{b}.norm.g"] = np.ones(co)
            p[f"{b}.norm.b"] = np.zeros(co)
            for m in ("q", "k", "v"):
                u(f"{b}.attn.{m}", (co, co), co)
            u(f"{b}.xattn.q", (co, co), co)
            u(f"{b}.xattn.k", (co, cfg.cond_dim), cfg.cond_dim)
            u(f"{b}.xattn.v", (co, cfg.cond_dim), cfg.cond_dim)
        c0 = cfg.widths[0]
        u("out.w", (cfg.in_channels, c0, 1, 1), c0)
        p["out.b"] = np.zeros(cfg.in_channels)
        p["cond.table"] = rng.gaussian(seed, (cfg.vocab, cfg.cond_dim), rng.string_seed("cond.table"))
        return p

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    @classmethod
    def from_tensors(cls, tensors: dict, meta: dict) -> "TinyUNet":
        cfg = dict(meta["config"])
        cfg["widths"] = tuple(cfg["widths"])
        cfg["train_size"] = tuple(cfg["train_size"])
        return cls(UNetConfig(**cfg), params=dict(tensors))

    def _block(self, b: str, h, temb, cond, hooks):
        p = self.params
        d = 1 if hooks is None else hooks.conv_dilation(b)
        h = conv2d_dilated(h, p[f"{b}.conv.w"], d, p[f"{b}.conv.b"])
        h = h + (p[f"{b}.time.w"] @ temb)[:, None, None]
        h = group_norm(h, self.config.groups)
        h = silu(h * p[f"{b}.norm.g"][:, None, None] + p[f"{b}.norm.b"][:, None, None])
        attn_w = {m: p[f"{b}.attn.{m}"] for m in ("q", "k", "v")}
        if hooks is None:
            h = h + attention_global(h, attn_w)
        else:
            div = _block_layout(self.config)[b][2]
            native = (self.config.train_size[0] // div, self.config.train_size[1] // div)
            h = h + hooks.self_attention(b, h, attn_w, native)
        xw = {m: p[f"{b}.xattn.{m}"] for m in ("q", "k", "v")}
        return h + cross_attention(h, cond, xw)

    def predict(self, z_t, t, cond, hooks=None) -> np.ndarray:
        """Noise prediction for one ``[C, H, W]`` latent."""
        z = np.asarray(z_t, dtype=np.float64)
        if z.ndim != 3:
            raise InvalidArgumentError(f"UNet takes [C, H, W] latents without a frame axis, got {z.shape}")
        if z.shape[0] != self.config.in_channels:
            raise InvalidArgumentError(f"expected {self.config.in_channels} channels, got {z.shape[0]}")
        if z.shape[1] % 4 or z.shape[2] % 4:
            raise InvalidArgumentError(f"spatial dims must be divisible by 4, got {z.shape[1:]}")
        p = self.params
        temb = silu(p["time.w"] @ sinusoidal_embedding(float(t), self.config.time_dim) + p["time.b"])
        h0 = self._block("down.0", z, temb, cond, hooks)
        h1 = self._block("down.1", avg_pool2(h0), temb, cond, hooks)
        hm = self._block("mid", avg_pool2(h1), temb, cond, hooks)
        u0 = self._block("up.0", np.concatenate([upsample_nearest2(hm), h1]), temb, cond, hooks)
        u1 = self._block("up.1", np.concatenate([upsample_nearest2(u0), h0]), temb, cond, hooks)
        return conv2d_dilated(u1, p["out.w"], 1, p["out.b"])

    def prompt_tokens(self, prompt: str) -> np.ndarray:
        return prompt_tokens(self.params["cond.table"], prompt)


def unet_predict(model: TinyUNet, z_t, t, cond, hooks=None) -> np.ndarray:
    return model.predict(z_t, t, cond, hooks)
