"""Closed-form combination weights for groups of similar patches.

A similarity matrix ``Y`` of shape ``(n, k)`` holds ``k`` flattened patches of
``n`` pixels as columns; a weight matrix ``Theta`` of shape ``(k, k)`` denoises
it as ``Y @ Theta``. All estimators accept stacks ``(..., n, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from lichi.linalg import SingularMatrixError, gram, solve_spd


class Pilot(str, Enum):
    SURE = "sure"
    NR2N = "nr2n"
    AVG = "avg"
    NOISY = "noisy"


@dataclass(frozen=True)
class PilotMethod:
    """Weight family used to build the initial pilot; ``alpha`` only matters for NR2N."""

    tag: Pilot = Pilot.NR2N
    alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "tag", Pilot(self.tag))
        if self.tag is Pilot.NR2N and not self.alpha > 0:
            raise ValueError("alpha must be positive for Noisier2Noise weights")


def ridge_form(g: np.ndarray, lam, mu) -> np.ndarray:
    """``(G + lam I)^-1 (G - mu I)``.

    This minimizes ``||A T - A||^2 + lam ||T||^2 + 2 mu tr(T)`` over ``T`` when
    ``G = A^T A``. ``lam`` and ``mu`` may be per-matrix arrays.
    """
    g = np.asarray(g, dtype=np.float64)
    k = g.shape[-1]
    mu = np.asarray(mu, dtype=np.float64)[..., None, None]
    rhs = g - mu * np.eye(k)
    return solve_spd(g, lam, rhs)


def weights_sure(y: np.ndarray, sigma: float, g: np.ndarray | None = None) -> np.ndarray:
    """Weights minimizing Stein's unbiased risk estimate for ``Y @ Theta``.

    Raises :class:`SingularMatrixError` when ``Y^T Y`` is singular (e.g. duplicate
    columns); use :func:`weights_nr2n` there instead.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-2]
    if g is None:
        g = gram(y)
    try:
        return ridge_form(g, 0.0, n * sigma**2)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            f"{exc}; the SURE weights need an invertible Gram matrix, "
            "fall back to Noisier2Noise weights (pilot 'nr2n')"
        ) from exc


def sure_value(y: np.ndarray, theta: np.ndarray, sigma: float) -> np.ndarray:
    """SURE of the risk ``E||Y Theta - X||_F^2``: ``-kn s^2 + ||Y T - Y||^2 + 2n s^2 tr(T)``."""
    y = np.asarray(y, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n, k = y.shape[-2:]
    resid = np.matmul(y, theta) - y
    fit = np.sum(resid**2, axis=(-2, -1))
    tr = np.trace(theta, axis1=-2, axis2=-1)
    return -k * n * sigma**2 + fit + 2 * n * sigma**2 * tr


def weights_nr2n(
    y: np.ndarray, sigma: float, alpha: float = 0.5, g: np.ndarray | None = None
) -> np.ndarray:
    """Noisier2Noise weights ``(Y^T Y + n (alpha s)^2 I)^-1 (Y^T Y - n s^2 I)``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-2]
    if g is None:
        g = gram(y)
    return ridge_form(g, n * (alpha * sigma) ** 2, n * sigma**2)


def weights_avg(k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.full((k, k), 1.0 / k)


def weights_noisy(k: int) -> np.ndarray:
    return np.eye(k)


def pilot_weights(y: np.ndarray, sigma: float, method: PilotMethod) -> np.ndarray:
    """Dispatch to the weight family of ``method`` for a stack of groups."""
    k = y.shape[-1]
    if method.tag is Pilot.SURE:
        return weights_sure(y, sigma)
    if method.tag is Pilot.NR2N:
        return weights_nr2n(y, sigma, method.alpha)
    if method.tag is Pilot.AVG:
        return np.broadcast_to(weights_avg(k), y.shape[:-2] + (k, k))
    return np.broadcast_to(weights_noisy(k), y.shape[:-2] + (k, k))
