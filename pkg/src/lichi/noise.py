"""Synthetic noise and the generalized Anscombe transform for Poisson-Gaussian data."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; reproducible across platforms for a given numpy."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise of std ``sigma``, or heteroscedastic noise of variance ``a x + b``."""

    sigma: float | None = None
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        gaussian = self.sigma is not None
        pg = self.a is not None or self.b is not None
        if gaussian == pg:
            raise ValueError("give either sigma or (a, b)")
        if gaussian and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if pg:
            a, b = self.a or 0.0, self.b or 0.0
            if a < 0 or b < 0 or (a == 0 and b == 0):
                raise ValueError("need a >= 0, b >= 0 and at least one positive")
            object.__setattr__(self, "a", float(a))
            object.__setattr__(self, "b", float(b))

    @property
    def is_gaussian(self) -> bool:
        return self.sigma is not None

    @classmethod
    def from_json(cls, path) -> NoiseModel:
        """Read a ``{"a": ..., "b": ...}`` sidecar file."""
        d = json.loads(Path(path).read_text())
        try:
            return cls(a=float(d["a"]), b=float(d["b"]))
        except KeyError as exc:
            raise ValueError(f"{path}: missing key {exc}") from None

    def sample(self, x, seed: int) -> np.ndarray:
        if self.is_gaussian:
            return add_awgn(x, self.sigma, seed)
        return add_poisson_gaussian(x, self.a, self.b, seed)


def add_awgn(x, sigma: float, seed: int) -> np.ndarray:
    """``x + w`` with i.i.d. ``w ~ N(0, sigma^2)``; no clipping."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng_for(seed).standard_normal(x.shape)


def add_poisson_gaussian(x, a: float, b: float, seed: int) -> np.ndarray:
    """Draw ``y ~ N(x, a x + b)`` per pixel (negative variances treated as 0)."""
    x = np.asarray(x, dtype=np.float64)
    std = np.sqrt(np.maximum(a * x + b, 0.0))
    return x + std * rng_for(seed).standard_normal(x.shape)


def gat_forward(v, a: float, b: float) -> np.ndarray:
    """``(2/a) sqrt(a v + 3a^2/8 + b)``, with 0 where the radicand is negative."""
    if not a > 0:
        raise ValueError("a must be positive; pure Gaussian noise needs no stabilization")
    rad = a * np.asarray(v, dtype=np.float64) + 0.375 * a * a + b
    return (2.0 / a) * np.sqrt(np.maximum(rad, 0.0))


def gat_inverse(u, a: float, b: float) -> np.ndarray:
    """Algebraic inverse ``(a/4) u^2 - 3a/8 - b/a`` of :func:`gat_forward`."""
    if not a > 0:
        raise ValueError("a must be positive")
    u = np.asarray(u, dtype=np.float64)
    return 0.25 * a * u * u - 0.375 * a - b / a


@dataclass(frozen=True)
class VstScaling:
    """Affine map from the stabilized domain to the 0..255 working range."""

    offset: float
    scale: float

    @property
    def sigma(self) -> float:
        # stabilized noise has unit std before scaling
        return self.scale


def vst_scaling(u: np.ndarray) -> VstScaling:
    lo, hi = float(np.min(u)), float(np.max(u))
    span = hi - lo
    return VstScaling(lo, 255.0 / span if span > 0 else 1.0)


def vst_denoise(y, a: float, b: float, denoise, scaling: VstScaling | None = None):
    """Denoise Poisson-Gaussian data with a Gaussian denoiser ``denoise(img, sigma)``.

    The stabilized image is mapped affinely onto 0..255 and denoised with
    ``sigma`` equal to the scale factor. Returns ``(estimate, scaling)``.
    """
    u = gat_forward(y, a, b)
    sc = scaling or vst_scaling(u)
    den = denoise((u - sc.offset) * sc.scale, sc.sigma)
    return gat_inverse(np.asarray(den) / sc.scale + sc.offset, a, b), sc
