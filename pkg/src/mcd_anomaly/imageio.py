"""16-bit grayscale PNG round-tripping for [-1, 1] float images."""

from __future__ import annotations

import numpy as np
from PIL import Image

U16_MAX = 65535


def to_uint16(image: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats linearly onto the full 16-bit range."""
    scaled = np.clip((np.asarray(image, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)
    return np.round(scaled * U16_MAX).astype(np.uint16)


def from_uint16(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float64) / U16_MAX) * 2.0 - 1.0


def save_gray16(image: np.ndarray, path) -> None:
    Image.fromarray(to_uint16(image)).save(path, format="PNG")


def load_gray16(path) -> np.ndarray:
    raw = np.array(Image.open(path))
    if raw.dtype != np.uint16:
        raise ValueError(f"{path}: expected 16-bit grayscale PNG, got dtype {raw.dtype}")
    return from_uint16(raw)


def save_normalized_gray16(values: np.ndarray, path) -> None:
    """Min-max normalize an arbitrary nonnegative field for viewing."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    Image.fromarray(np.round(scaled * U16_MAX).astype(np.uint16)).save(path, format="PNG")
