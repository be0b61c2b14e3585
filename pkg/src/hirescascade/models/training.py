"""Synthetic scene data and training loops for the toy transformer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autograd as ag
from .. import rng
from ..errors import NumericalError
from ..schedule import NoiseSchedule
from .codec import default_codec
from .lora import TrainBatch, lora_loss_and_grads, lora_train_step, noised_inputs

SCENE_PROMPT = "a photo of soft coloured shapes"


def render_scene(seed: int, height: int, width: int, frames: int | None = None) -> np.ndarray:
    """RGB Gaussian-mixture scene in ``[-1, 1]``.

    Returns ``[3, H, W]`` or, with ``frames``, ``[3, F, H, W]`` where the
    blobs drift linearly over time.
    """
    g = rng.generator(seed, 0x5CE7E)
    n_blobs = int(g.integers(1, 4))
    bg = g.uniform(-0.6, 0.2, 3)
    centers = g.uniform(0.15, 0.85, (n_blobs, 2))
    velocity = g.uniform(-0.04, 0.04, (n_blobs, 2))
    widths = g.uniform(0.07, 0.18, n_blobs)
    colors = g.uniform(-1.0, 1.0, (n_blobs, 3))
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    out = []
    for f in range(frames or 1):
        img = np.broadcast_to(bg[:, None, None], (3, height, width)).copy()
        for c, v, s, col in zip(centers, velocity, widths, colors):
            cy, cx = c + f * v
            blob = np.exp(-0.5 * (((ys[:, None] - cy) / s) ** 2 + ((xs[None, :] - cx) / s) ** 2))
            img += (col - bg)[:, None, None] * blob
        out.append(np.clip(img, -1.0, 1.0))
    return out[0] if frames is None else np.stack(out, axis=1)


def scene_latents(seeds, height: int, width: int, frames: int = 1) -> np.ndarray:
    """Encoded scenes ``[B, 12, F, H/2, W/2]`` for RGB size ``(height, width)``."""
    codec = default_codec()
    return np.stack([codec.encode(render_scene(int(s), height, width, frames)) for s in seeds])


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainSettings:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 2e-3
    cosine_decay: bool = True
    seed: int = 0
    frames: int = 1
    prompt: str = SCENE_PROMPT


def sample_batch(step: int, settings: TrainSettings, latent_hw: tuple[int, int], schedule: NoiseSchedule, cond) -> TrainBatch:
    g = rng.generator(settings.seed, 0xBA7C, step)
    seeds = g.integers(0, 2**62, settings.batch_size)
    z0 = scene_latents(seeds, 2 * latent_hw[0], 2 * latent_hw[1], settings.frames)
    t = g.integers(1, schedule.T + 1, settings.batch_size)
    eps = rng.gaussian(settings.seed, z0.shape, 0xE95, step)
    return TrainBatch(z0, t, eps, cond)


def evaluation_batch(settings: TrainSettings, latent_hw: tuple[int, int], schedule: NoiseSchedule, cond, size: int = 8) -> TrainBatch:
    """Fixed held-out batch with evenly spread timesteps, independent of the training stream."""
    g = rng.generator(settings.seed, 0xE7A1)
    seeds = g.integers(0, 2**62, size)
    z0 = scene_latents(seeds, 2 * latent_hw[0], 2 * latent_hw[1], settings.frames)
    t = np.linspace(1, schedule.T, size + 2)[1:-1].round().astype(int)
    eps = rng.gaussian(settings.seed, z0.shape, 0xE7A1)
    return TrainBatch(z0, t, eps, cond)


def train_denoiser(model, schedule: NoiseSchedule, settings: TrainSettings, log_every: int = 0) -> list[float]:
    """Full-parameter Adam training on synthetic scenes at the model's training size."""
    latent_hw = model.config.train_size
    opt = Adam(model.params, settings.lr)
    cond = model.prompt_tokens(settings.prompt)
    losses = []
    for step in range(settings.steps):
        batch = sample_batch(step, settings, latent_hw, schedule, cond)
        weights = {k: ag.Tensor(v, True) for k, v in model.params.items() if k != "cond.table"}
        z_t = noised_inputs(batch, schedule)
        pred = model.forward(z_t, batch.t, batch.cond, weights=weights)
        loss = ag.mean_all(ag.square(ag.add(pred, -batch.eps)))
        value = float(loss.data)
        if not math.isfinite(value):
            raise NumericalError("non-finite training loss", step=step, loss=value)
        loss.backward()
        if settings.cosine_decay:
            opt.lr = settings.lr * 0.5 * (1 + math.cos(math.pi * step / settings.steps))
        opt.step(model.params, {k: w.grad for k, w in weights.items() if w.grad is not None})
        losses.append(value)
        if log_every and step % log_every == 0:
            print(f"step {step:5d}  loss {value:.5f}")
    return losses


def train_lora(model, adapters, schedule: NoiseSchedule, settings: TrainSettings, latent_hw, rope=None, temperature: float = 1.0):
    """Adapter-only gradient descent at an extended latent size.

    Returns
    -------
    adapters, losses, eval_losses
        Trained adapters, the per-step training losses and the loss on a fixed
        held-out batch before and after training.
    """
    cond = model.prompt_tokens(settings.prompt)
    held_out = evaluation_batch(settings, latent_hw, schedule, cond)
    initial = lora_loss_and_grads(model, adapters, held_out, schedule, rope, temperature)[0]
    losses = []
    for step in range(settings.steps):
        batch = sample_batch(step, settings, latent_hw, schedule, cond)
        adapters, loss = lora_train_step(model, adapters, batch, settings.lr, schedule, rope, temperature)
        losses.append(loss)
    final = lora_loss_and_grads(model, adapters, held_out, schedule, rope, temperature)[0]
    return adapters, losses, (initial, final)
