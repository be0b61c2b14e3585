"""Tiny diffusion transformer over image or video latents.

Latents are patchified 2x2 in space (1 in time) into tokens carrying
integer (frame, row, column) coordinates; self-attention rotates queries
and keys with 3-axis RoPE. The forward pass is written on the autograd
``Tensor`` so the same code serves inference, base training and LoRA.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import autograd as ag
from .. import rng
from ..dit_scale import RopeConfig, rope_tables
from ..errors import InvalidArgumentError
from .conditioning import prompt_tokens, split_condition
from .lora import merged_weights
from .unet import init_uniform, sinusoidal_embedding

PATCH = 2


@dataclass(frozen=True)
class DiTConfig:
    in_channels: int = 12
    dim: int = 64
    heads: int = 2
    axis_dims: tuple[int, int, int] = (4, 14, 14)
    depth: int = 3
    mlp_dim: int = 128
    cond_dim: int = 16
    time_dim: int = 32
    vocab: int = 32
    train_size: tuple[int, int] = (16, 16)
    train_frames: int = 1
    max_tokens: int = 4096

    @property
    def head_dim(self) -> int:
        return sum(self.axis_dims)

    def __post_init__(self):
        if self.heads * self.head_dim != self.dim:
            raise InvalidArgumentError(f"heads * sum(axis_dims) must equal dim ({self.heads} * {self.head_dim} != {self.dim})")
        if any(d % 2 for d in self.axis_dims):
            raise InvalidArgumentError(f"per-axis head dims must be even, got {self.axis_dims}")

    def train_extent(self) -> tuple[int, int, int]:
        """Tokens per (frame, row, column) axis at training resolution."""
        return (self.train_frames, self.train_size[0] // PATCH, self.train_size[1] // PATCH)

    def train_tokens(self) -> int:
        return int(np.prod(self.train_extent()))


def patchify(z: np.ndarray) -> np.ndarray:
    """``[B, C, F, H, W] -> [B, F*(H/2)*(W/2), C*4]``."""
    b, c, f, h, w = z.shape
    x = z.reshape(b, c, f, h // PATCH, PATCH, w // PATCH, PATCH)
    return x.transpose(0, 2, 3, 5, 1, 4, 6).reshape(b, f * (h // PATCH) * (w // PATCH), c * PATCH * PATCH)


def unpatchify(x: ag.Tensor, shape: tuple) -> ag.Tensor:
    b, c, f, h, w = shape
    x = ag.reshape(x, (b, f, h // PATCH, w // PATCH, c, PATCH, PATCH))
    x = ag.transpose(x, (0, 4, 1, 2, 5, 3, 6))
    return ag.reshape(x, shape)


def token_coords(f: int, h2: int, w2: int, offset=(0, 0, 0)) -> np.ndarray:
    grid = np.stack(np.meshgrid(np.arange(f), np.arange(h2), np.arange(w2), indexing="ij"), axis=-1)
    return grid.reshape(-1, 3) + np.asarray(offset)


def _split_heads(x: ag.Tensor, heads: int) -> ag.Tensor:
    b, n, d = x.shape
    return ag.transpose(ag.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: ag.Tensor) -> ag.Tensor:
    b, h, n, hd = x.shape
    return ag.reshape(ag.transpose(x, (0, 2, 1, 3)), (b, n, h * hd))


def multihead_attention(q, k, v, heads: int, cos=None, sin=None, temperature: float = 1.0, observer=None):
    """Scaled dot-product attention over ``[B, N, D]`` projections.

    When ``cos``/``sin`` are given, queries and keys are rotated first.
    Logits are divided by ``temperature * sqrt(head_dim)``.
    """
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    if cos is not None:
        qh = ag.rotate_pairs(qh, cos, sin)
        kh = ag.rotate_pairs(kh, cos, sin)
    hd = qh.shape[-1]
    scores = ag.scale(ag.matmul(qh, ag.transpose(kh, (0, 1, 3, 2))), 1.0 / (temperature * math.sqrt(hd)))
    probs = ag.softmax(scores, axis=-1)
    if observer is not None:
        observer(probs.data)
    return _merge_heads(ag.matmul(probs, vh))


class TinyDiT:
    kind = "dit"

    def __init__(self, config: DiTConfig | None = None, params: dict | None = None, seed: int = 0):
        self.config = config or DiTConfig()
        self.params = params if params is not None else self.init_params(seed)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg = self.config
        d, tok = cfg.dim, cfg.in_channels * PATCH * PATCH
        p: dict[str, np.ndarray] = {}

        def u(name, shape, fan_in):
            p[name] = init_uniform(seed, name, shape, fan_in)

        u("embed.w", (d, tok), tok)
        p["embed.b"] = np.zeros(d)
        u("time.w1", (d, cfg.time_dim), cfg.time_dim)
        p["time.b1"] = np.zeros(d)
        u("time.w2", (d, d), d)
        p["time.b2"] = np.zeros(d)
        for i in range(cfg.depth):
            b = f"blocks.{i}"
            u(f"{b}.time.w", (d, d), d)
            for m in ("q", "k", "v", "o"):
                u(f"{b}.attn.{m}.w", (d, d), d)
            p[f"{b}.attn.o.b"] = np.zeros(d)
            u(f"{b}.xattn.q.w", (d, d), d)
            u(f"{b}.xattn.k.w", (d, cfg.cond_dim), cfg.cond_dim)
            u(f"{b}.xattn.v.w", (d, cfg.cond_dim), cfg.cond_dim)
            u(f"{b}.xattn.o.w", (d, d), d)
            p[f"{b}.xattn.o.b"] = np.zeros(d)
            u(f"{b}.mlp.w1", (cfg.mlp_dim, d), d)
            p[f"{b}.mlp.b1"] = np.zeros(cfg.mlp_dim)
            u(f"{b}.mlp.w2", (d, cfg.mlp_dim), cfg.mlp_dim)
            p[f"{b}.mlp.b2"] = np.zeros(d)
        u("final.w", (tok, d), d)
        p["final.b"] = np.zeros(tok)
        # input skip starts at identity: eps ~ z_t is the right answer at high noise
        p["skip.w"] = np.eye(tok)
        p["cond.table"] = rng.gaussian(seed, (cfg.vocab, cfg.cond_dim), rng.string_seed("cond.table"))
        return p

    def meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}

    @classmethod
    def from_tensors(cls, tensors: dict, meta: dict) -> "TinyDiT":
        cfg = dict(meta["config"])
        for key in ("axis_dims", "train_size"):
            cfg[key] = tuple(cfg[key])
        return cls(DiTConfig(**cfg), params=dict(tensors))

    def prompt_tokens(self, prompt: str) -> np.ndarray:
        return prompt_tokens(self.params["cond.table"], prompt)

    def default_rope(self) -> RopeConfig:
        return RopeConfig(axis_dims=self.config.axis_dims)

    # ------------------------------------------------------------------
    def forward(
        self,
        z: np.ndarray,
        t,
        cond,
        rope: RopeConfig | None = None,
        temperature: float = 1.0,
        pos_offset=(0, 0, 0),
        weights: dict | None = None,
        hooks=None,
    ) -> ag.Tensor:
        """Batched forward over ``z`` shaped ``[B, C, F, H, W]``.

        ``weights`` maps parameter names to ``Tensor`` objects (e.g. with
        LoRA deltas merged in); missing names fall back to constants.
        ``cond`` is ``[tokens, cond_dim]``, ``[B, tokens, cond_dim]`` or a
        ``RegionConditioning`` shared by the batch.
        """
        cfg = self.config
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 5:
            raise InvalidArgumentError(f"expected [B, C, F, H, W], got {z.shape}")
        bsz, c, f, h, w = z.shape
        if c != cfg.in_channels:
            raise InvalidArgumentError(f"expected {cfg.in_channels} channels, got {c}")
        if h % PATCH or w % PATCH:
            raise InvalidArgumentError(f"spatial dims must be even, got {(h, w)}")
        n_tokens = f * (h // PATCH) * (w // PATCH)
        if n_tokens > cfg.max_tokens:
            raise InvalidArgumentError(f"{n_tokens} tokens exceeds the configured maximum {cfg.max_tokens}")
        rope = rope or self.default_rope()
        if tuple(rope.axis_dims) != tuple(cfg.axis_dims):
            raise InvalidArgumentError(f"rope axis dims {rope.axis_dims} do not match model {cfg.axis_dims}")
        weights = weights or {}

        def P(name):
            return weights[name] if name in weights else ag.Tensor(self.params[name])

        cos, sin = rope_tables(token_coords(f, h // PATCH, w // PATCH, pos_offset), rope)
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (bsz,))
        temb = ag.silu(ag.linear(sinusoidal_embedding(t_arr, cfg.time_dim), P("time.w1"), P("time.b1")))
        temb = ag.linear(temb, P("time.w2"), P("time.b2"))  # [B, D]

        global_tokens, region = split_condition(cond)
        if region is not None:
            sel = np.tile(region.selector(h // PATCH, w // PATCH).reshape(-1), f)
            token_sets = region.token_sets()
        else:
            sel, token_sets = None, [global_tokens]

        patches = patchify(z)
        x = ag.linear(patches, P("embed.w"), P("embed.b"))
        for i in range(cfg.depth):
            b = f"blocks.{i}"
            x = ag.add(x, ag.reshape(ag.linear(temb, P(f"{b}.time.w")), (bsz, 1, cfg.dim)))
            hn = ag.layer_norm(x)
            q = ag.linear(hn, P(f"{b}.attn.q.w"))
            k = ag.linear(hn, P(f"{b}.attn.k.w"))
            v = ag.linear(hn, P(f"{b}.attn.v.w"))
            observer = None if hooks is None else (lambda probs, i=i: hooks.on_attention(i, probs))
            a = multihead_attention(q, k, v, cfg.heads, cos, sin, temperature, observer)
            x = ag.add(x, ag.linear(a, P(f"{b}.attn.o.w"), P(f"{b}.attn.o.b")))

            hn = ag.layer_norm(x)
            qx = ag.linear(hn, P(f"{b}.xattn.q.w"))
            outs = []
            for toks in token_sets:
                toks = np.asarray(toks, dtype=np.float64)
                if toks.ndim == 2:
                    toks = np.broadcast_to(toks, (bsz,) + toks.shape)
                kx = ag.linear(toks, P(f"{b}.xattn.k.w"))
                vx = ag.linear(toks, P(f"{b}.xattn.v.w"))
                outs.append(multihead_attention(qx, kx, vx, cfg.heads))
            xa = outs[0]
            for j in range(1, len(outs)):
                mask = (sel == j)[None, :, None]
                if mask.any():
                    xa = ag.where(mask, outs[j], xa)
            x = ag.add(x, ag.linear(xa, P(f"{b}.xattn.o.w"), P(f"{b}.xattn.o.b")))

            hn = ag.layer_norm(x)
            m = ag.gelu(ag.linear(hn, P(f"{b}.mlp.w1"), P(f"{b}.mlp.b1")))
            x = ag.add(x, ag.linear(m, P(f"{b}.mlp.w2"), P(f"{b}.mlp.b2")))

        out = ag.add(ag.linear(ag.layer_norm(x), P("final.w"), P("final.b")), ag.linear(patches, P("skip.w")))
        return unpatchify(out, z.shape)

    def predict(self, z_t, t, cond, rope=None, temperature: float = 1.0, hooks=None, pos_offset=(0, 0, 0), adapters=None):
        """Noise prediction for one ``[C, H, W]`` or ``[C, F, H, W]`` latent."""
        z = np.asarray(z_t, dtype=np.float64)
        if z.ndim == 3:
            batch = z[None, :, None]
        elif z.ndim == 4:
            batch = z[None]
        else:
            raise InvalidArgumentError(f"expected [C, H, W] or [C, F, H, W], got {z.shape}")
        weights = merged_weights(self, adapters) if adapters else None
        out = self.forward(batch, t, cond, rope, temperature, pos_offset, weights, hooks).data[0]
        return out[:, 0] if z.ndim == 3 else out


def dit_predict(model: TinyDiT, z_t, t, cond, rope: RopeConfig | None = None, temperature: float = 1.0, hooks=None, **kw):
    return model.predict(z_t, t, cond, rope, temperature, hooks, **kw)
