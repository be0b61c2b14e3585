"""Signal-level image metrics: radial power spectrum, high-frequency energy
ratio and an autocorrelation repetition score."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .tensor_ops import gaussian_lowpass

DEFAULT_BINS = 32
_R_MAX = math.sqrt(0.5)  # radial frequency of the (Nyquist, Nyquist) corner


def _as_gray(image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgumentError("empty image")
    if x.ndim == 3:
        x = x.mean(axis=0)
    if x.ndim != 2:
        raise InvalidArgumentError(f"expected [H, W] or [C, H, W], got shape {x.shape}")
    return x


@dataclass(frozen=True)
class SpectrumProfile:
    """Mean power per radial band; ``bins[0]`` holds the DC term only."""

    bins: np.ndarray

    def __len__(self) -> int:
        return len(self.bins)

    def tolist(self) -> list[float]:
        return [float(b) for b in self.bins]


def power_spectrum(image) -> np.ndarray:
    """Unnormalized ``|DFT|^2``; sums to ``N * sum(x^2)``."""
    return np.abs(np.fft.fft2(_as_gray(image))) ** 2


def radial_frequency(shape: tuple[int, int]) -> np.ndarray:
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.hypot(fy[:, None], fx[None, :])


def frequency_bin(radius, bins: int = DEFAULT_BINS):
    """Band index for a radial frequency in cycles per sample."""
    r = np.asarray(radius, dtype=np.float64)
    idx = 1 + np.minimum(bins - 2, np.floor(r / _R_MAX * (bins - 1)).astype(int))
    return np.where(r == 0, 0, idx)


def spectrum_profile(image, bins: int = DEFAULT_BINS) -> SpectrumProfile:
    """Radially binned power normalized by ``N^2`` so bin 0 equals ``mean^2``."""
    if bins < 2:
        raise InvalidArgumentError(f"bins must be >= 2, got {bins}")
    x = _as_gray(image)
    power = power_spectrum(x) / x.size**2
    idx = frequency_bin(radial_frequency(x.shape), bins).ravel()
    total = np.bincount(idx, weights=power.ravel(), minlength=bins)
    count = np.bincount(idx, minlength=bins)
    return SpectrumProfile(np.divide(total, count, out=np.zeros(bins), where=count > 0))


def hf_energy_ratio(image, cutoff_sigma: float = 1.0) -> float:
    """``||x - G(x)||^2 / ||x - mean(x)||^2`` clipped to ``[0, 1]``; 0 for flat input."""
    if cutoff_sigma <= 0:
        raise InvalidArgumentError(f"cutoff_sigma must be > 0, got {cutoff_sigma}")
    x = _as_gray(image)
    if np.ptp(x) == 0:
        return 0.0
    x = x - x.mean()
    den = float(np.sum(x * x))
    if den <= 1e-300:
        return 0.0
    num = float(np.sum((x - gaussian_lowpass(x, cutoff_sigma)) ** 2))
    return min(1.0, max(0.0, num / den))


def autocorrelation(image) -> np.ndarray:
    """Circular, mean-removed autocorrelation normalized by the zero lag."""
    x = _as_gray(image)
    if np.ptp(x) == 0:
        return np.zeros_like(x)
    x = x - x.mean()
    f = np.fft.fft2(x)
    ac = np.fft.ifft2(f * np.conj(f)).real
    zero = ac[0, 0]
    if zero <= 1e-300 * x.size:
        return np.zeros_like(ac)
    return ac / zero


def repetition_score(image, min_lag: int = 8) -> float:
    """Largest normalized autocorrelation over lags with ``max(|dy|, |dx|) >= min_lag``."""
    if min_lag < 1:
        raise InvalidArgumentError(f"min_lag must be >= 1, got {min_lag}")
    x = _as_gray(image)
    if x.shape[0] < 2 * min_lag or x.shape[1] < 2 * min_lag:
        raise InvalidArgumentError(f"image {x.shape} smaller than 2*min_lag={2 * min_lag} per axis")
    ac = autocorrelation(x)
    h, w = x.shape
    # signed minimal lags so (dy, dx) and (-dy, -dx) are treated alike
    ly = np.abs((np.arange(h) + h // 2) % h - h // 2)
    lx = np.abs((np.arange(w) + w // 2) % w - w // 2)
    far = np.maximum(ly[:, None], lx[None, :]) >= min_lag
    if not far.any():
        return 0.0
    return float(np.clip(ac[far].max(), 0.0, 1.0))


def image_metrics(image, cutoff_sigma: float = 1.0, min_lag: int = 8, bins: int = DEFAULT_BINS) -> dict:
    """The three metrics bundled as a JSON-ready dict."""
    x = _as_gray(image)
    lag = min(min_lag, x.shape[0] // 2, x.shape[1] // 2)
    return {
        "hf_energy_ratio": hf_energy_ratio(x, cutoff_sigma),
        "repetition_score": repetition_score(x, lag) if lag >= 1 else 0.0,
        "spectrum": spectrum_profile(x, bins).tolist(),
    }
