"""8-bit grayscale file I/O. Intensities map one-to-one onto bytes, no rescaling."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageFormatError(ValueError):
    pass


def load_gray(path) -> np.ndarray:
    """Read an 8-bit grayscale PGM (P5) or PNG into a float64 array with values 0..255."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {mode}); need 8-bit")
            if mode != "L":
                raise ImageFormatError(
                    f"{path}: unsupported image mode {mode}; need 8-bit grayscale, not color"
                )
            data = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise OSError(f"{path}: not a readable PGM/PNG image") from exc
    return data.astype(np.float64)


def to_bytes(img) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero."""
    img = np.asarray(img, dtype=np.float64)
    if np.isnan(img).any():
        raise ValueError("image contains NaN")
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def save_gray(img, path) -> None:
    """Write ``img`` as 8-bit grayscale; the format follows the suffix (``.png``, ``.pgm``)."""
    path = Path(path)
    data = to_bytes(img)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {data.shape}")
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".pnm") else None
    Image.fromarray(data, mode="L").save(path, format=fmt)
