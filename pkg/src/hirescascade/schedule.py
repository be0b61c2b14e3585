"""Noise schedules, forward noising, DDIM reverse steps, timestep shifting
and the cosine detail blend used by cascade stages.

Timesteps are 1-based: ``t`` in ``1..T`` indexes ``alpha_bar[t - 1]`` and
``t = 0`` denotes the clean latent with ``alpha_bar = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvalidArgumentError

__all__ = [
    "NoiseSchedule",
    "DetailControl",
    "make_schedule",
    "forward_noise",
    "renoise_to",
    "reverse_step_ddim",
    "shift_timesteps",
    "warp_unit",
    "blend_factor",
    "detail_blend",
    "timestep_sequence",
]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    shift: float = 1.0

    def __post_init__(self):
        for arr in (self.beta, self.alpha, self.alpha_bar):
            arr.setflags(write=False)

    @property
    def T(self) -> int:
        return len(self.beta)

    def abar(self, t: int) -> float:
        """``alpha_bar`` at integer timestep ``t`` with ``abar(0) == 1``."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [0, {self.T}]")
        return float(self.alpha_bar[t - 1])

    def to_dict(self) -> dict:
        return {"T": self.T, "shift": self.shift}


def make_schedule(T: int, beta_start: float, beta_end: float, kind: str = "linear") -> NoiseSchedule:
    """Build ``beta`` by linear (or sqrt-linear, for ``scaled_linear``) interpolation."""
    if int(T) != T or T < 1:
        raise InvalidArgumentError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidArgumentError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, int(T))
    elif kind == "scaled_linear":
        beta = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), int(T)) ** 2
    else:
        raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def forward_noise(z0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) z0 + sqrt(1 - abar_t) eps``."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_same_shape(z0, eps, "forward_noise")
    if not 1 <= t <= s.T and t != 0:
        raise InvalidArgumentError(f"timestep {t} outside [1, {s.T}]")
    ab = s.abar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def renoise_to(z0_up, K: int, s: NoiseSchedule, seed: int, stream: int = 0) -> np.ndarray:
    """Forward-noise ``z0_up`` to step ``K`` with noise drawn from ``seed``."""
    if int(K) != K or not 1 <= K <= s.T:
        raise InvalidArgumentError(f"K must be in [1, {s.T}], got {K}")
    z0_up = np.asarray(z0_up, dtype=np.float64)
    eps = rng.gaussian(seed, z0_up.shape, stream)
    return forward_noise(z0_up, int(K), eps, s)


def reverse_step_ddim(z_t, eps_pred, t: int, t_prev: int, s: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update from ``t`` to ``t_prev``."""
    if not t > t_prev >= 0:
        raise InvalidArgumentError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    z_t = np.asarray(z_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    _check_same_shape(z_t, eps_pred, "reverse_step_ddim")
    ab_t = s.abar(t)
    ab_prev = s.abar(t_prev)
    z0_hat = (z_t - math.sqrt(1.0 - ab_t) * eps_pred) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * z0_hat + math.sqrt(1.0 - ab_prev) * eps_pred


def warp_unit(u, shift: float):
    """Resolution-shift warp ``u' = s u / (1 + (s - 1) u)`` on ``[0, 1]``."""
    return shift * u / (1.0 + (shift - 1.0) * u)


def shift_timesteps(s: NoiseSchedule, shift: float) -> NoiseSchedule:
    """Resample ``alpha_bar`` at warped unit times so every step carries more noise."""
    if not shift >= 1:
        raise InvalidArgumentError(f"shift must be >= 1, got {shift}")
    if shift == 1:
        return s
    T = s.T
    grid = np.arange(T + 1) / T
    table = np.concatenate([[1.0], s.alpha_bar])
    u_warped = warp_unit(grid[1:], shift)
    alpha_bar = np.interp(u_warped, grid, table)
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    alpha = alpha_bar / prev
    return NoiseSchedule(beta=1.0 - alpha, alpha=alpha, alpha_bar=alpha_bar, shift=s.shift * shift)


@dataclass(frozen=True, eq=False)
class DetailControl:
    """Exponent of the cosine blend factor: a scalar or a per-cell map."""

    alpha_map: np.ndarray | float = 1.0

    def __post_init__(self):
        a = np.asarray(self.alpha_map, dtype=np.float64)
        if a.ndim not in (0, 2):
            raise InvalidArgumentError(f"alpha map must be scalar or 2-D, got ndim={a.ndim}")
        if not np.all(np.isfinite(a)) or not np.all(a > 0):
            raise InvalidArgumentError("alpha map entries must be finite and > 0")
        object.__setattr__(self, "alpha_map", a)


def blend_factor(t: int, T: int, alpha) -> np.ndarray:
    """``((1 + cos((T - t) / T * pi)) / 2) ** alpha``."""
    base = (1.0 + math.cos((T - t) / T * math.pi)) / 2.0
    return np.power(base, np.asarray(alpha, dtype=np.float64))


def detail_blend(z_tilde_t, z_t, t: int, T: int, dc: DetailControl) -> np.ndarray:
    """Mix the anchored latent into the live one: ``c z~ + (1 - c) z``."""
    z_tilde_t = np.asarray(z_tilde_t, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    _check_same_shape(z_tilde_t, z_t, "detail_blend")
    a = dc.alpha_map
    if a.ndim == 2 and a.shape != z_t.shape[-2:]:
        raise InvalidArgumentError(f"alpha map {a.shape} does not match spatial dims {z_t.shape[-2:]}")
    c = blend_factor(t, T, a)
    return c * z_tilde_t + (1.0 - c) * z_t


def timestep_sequence(start: int, num_steps: int) -> list[int]:
    """Descending integer timesteps from ``start`` to 0 inclusive.

    At most ``num_steps`` transitions; duplicates from rounding are dropped.
    """
    if start < 1:
        raise InvalidArgumentError(f"start must be >= 1, got {start}")
    n = max(1, min(int(num_steps), int(start)))
    ts = np.rint(np.linspace(start, 0, n + 1)).astype(int)
    out: list[int] = []
    for t in ts:
        if not out or t < out[-1]:
            out.append(int(t))
    return out
