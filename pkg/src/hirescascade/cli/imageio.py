"""Binary PPM (P6) reading and writing plus the latent-to-RGB byte mapping."""

from __future__ import annotations

import os
import re

import numpy as np

from ..errors import InvalidArgumentError

RGB_SCALE = 127.5
RGB_OFFSET = 127.5
RGB_MAPPING = {"scale": RGB_SCALE, "offset": RGB_OFFSET, "clip": [0, 255], "rounding": "half-even"}


def to_bytes(rgb: np.ndarray) -> np.ndarray:
    """Map ``[3, H, W]`` floats in ``[-1, 1]`` to ``[H, W, 3]`` uint8."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise InvalidArgumentError(f"expected [3, H, W], got {rgb.shape}")
    return np.clip(np.rint(rgb * RGB_SCALE + RGB_OFFSET), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_bytes(pixels: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_bytes` up to quantization."""
    return (np.asarray(pixels, dtype=np.float64).transpose(2, 0, 1) - RGB_OFFSET) / RGB_SCALE


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InvalidArgumentError(f"expected uint8 [H, W, 3], got {pixels.dtype} {pixels.shape}")
    h, w, _ = pixels.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels).tobytes()


_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def decode_ppm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if m is None:
        raise InvalidArgumentError("not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise InvalidArgumentError(f"only 8-bit PPM is supported, maxval={maxval}")
    body = data[m.end() : m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise InvalidArgumentError("truncated PPM data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path: str | os.PathLike, pixels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(pixels))


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_png(path: str | os.PathLike, pixels: np.ndarray) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # optional dependency
        raise InvalidArgumentError("PNG output needs Pillow; install the 'png' extra or use ppm") from exc
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), "RGB").save(path, format="PNG")


def read_image(path: str | os.PathLike) -> np.ndarray:
    """uint8 ``[H, W, 3]`` from a PPM or, with Pillow, any format it reads."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P6":
        return decode_ppm(data)
    try:
        from PIL import Image
    except ImportError as exc:
        raise InvalidArgumentError(f"{path}: unsupported image format without Pillow") from exc
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)
