"""Synthetic denoiser whose data are object templates tiled at one of several
periods. Sampled from pure noise well above its training size it fills the
canvas with copies of the object, which is the duplication artifact the
UNet adaptations are meant to suppress; dilation shifts its preference to
longer periods, and an anchored latent pins the layout it already has.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from ..errors import InvalidArgumentError
from .codec import default_codec
from .conditioning import prompt_tokens


@dataclass(frozen=True)
class OracleConfig:
    in_channels: int = 12
    period: int = 16
    amplitude: float = 3.0
    spread: float = 0.1
    preference: float = 8.0  # log-odds favouring the dilation-matched period
    train_size: tuple[int, int] = (16, 16)
    cond_dim: int = 16
    vocab: int = 32
    seed: int = 0


def object_template(period: int) -> np.ndarray:
    """Zero-mean difference-of-Gaussians blob filling a ``period`` tile."""
    c = (np.arange(period) + 0.5) - period / 2
    r2 = c[:, None] ** 2 + c[None, :] ** 2
    s = period / 8
    tmpl = np.exp(-r2 / (2 * s * s)) - 0.5 * np.exp(-r2 / (8 * s * s))
    tmpl -= tmpl.mean()
    return tmpl / np.abs(tmpl).max()


def tiled_prior(height: int, width: int, period: int) -> np.ndarray:
    tile = object_template(period)
    ys = np.arange(height) % period
    xs = np.arange(width) % period
    return tile[ys[:, None], xs[None, :]]


class PeriodicBiasUNet:
    """Exact posterior-mean denoiser for a Gaussian mixture over layouts.

    Component ``k`` is ``N(mu_k, spread^2 I)`` where ``mu_k`` tiles the
    object at period ``period * 2^k``. The component whose period equals
    ``period * d`` (``d`` being the dilation the hooks give the ``mid``
    block) carries ``preference`` extra log-weight.
    """

    kind = "unet"

    def __init__(self, schedule, config: OracleConfig | None = None):
        self.config = config or OracleConfig()
        self.schedule = schedule
        cfg = self.config
        # latent direction of a flat grey patch, so the prior decodes to luminance
        u = default_codec().encode(np.ones((3, 2, 2)))[:, 0, 0]
        if u.shape[0] != cfg.in_channels:
            raise InvalidArgumentError(f"oracle needs {u.shape[0]} latent channels")
        self.direction = u / np.linalg.norm(u)
        self.params = {"cond.table": rng.gaussian(cfg.seed, (cfg.vocab, cfg.cond_dim), rng.string_seed("cond.table"))}

    def prompt_tokens(self, prompt: str) -> np.ndarray:
        return prompt_tokens(self.params["cond.table"], prompt)

    def periods(self, height: int, width: int, d: int = 1) -> list[int]:
        out, p = [], self.config.period
        while p <= max(height, width) or not out:
            out.append(p)
            p *= 2
        want = self.config.period * d
        return out if want in out else out + [want]

    def component_mean(self, height: int, width: int, period: int) -> np.ndarray:
        tile = self.config.amplitude * tiled_prior(height, width, period)
        return self.direction[:, None, None] * tile[None]

    def predict(self, z_t, t, cond=None, hooks=None) -> np.ndarray:
        z = np.asarray(z_t, dtype=np.float64)
        if z.ndim != 3 or z.shape[0] != self.config.in_channels:
            raise InvalidArgumentError(f"expected [{self.config.in_channels}, H, W], got {z.shape}")
        if z.shape[1] % 4 or z.shape[2] % 4:
            raise InvalidArgumentError(f"spatial dims must be divisible by 4, got {z.shape[1:]}")
        d = 1
        if hooks is not None:
            for b in ("down.0", "down.1", "mid", "up.0", "up.1"):
                db = hooks.conv_dilation(b)
                d = db if b == "mid" else d
        cfg = self.config
        ab = self.schedule.abar(int(t))
        var = ab * cfg.spread**2 + 1 - ab
        gain = cfg.spread**2 * np.sqrt(ab) / var
        periods = self.periods(z.shape[1], z.shape[2], d)
        means = [self.component_mean(z.shape[1], z.shape[2], p) for p in periods]
        logw = np.array(
            [
                (cfg.preference if p == cfg.period * d else 0.0) - np.sum((z - np.sqrt(ab) * mu) ** 2) / (2 * var)
                for p, mu in zip(periods, means)
            ]
        )
        r = np.exp(logw - logw.max())
        r /= r.sum()
        x0 = sum(rk * (mu + gain * (z - np.sqrt(ab) * mu)) for rk, mu in zip(r, means))
        return (z - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
