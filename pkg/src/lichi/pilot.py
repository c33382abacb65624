"""Initial pilot: one pass of grouped linear combinations of noisy patches."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lichi.patches import GroupSet, accumulate, chunks, extract_groups, finish_average, gather
from lichi.weights import Pilot, PilotMethod, pilot_weights

log = logging.getLogger(__name__)

# (upper sigma bound, patch side, group size, iterations of the main loop)
SIGMA_BANDS = ((10.0, 9, 16, 6), (30.0, 11, 16, 9), (50.0, 13, 16, 11))


def sigma_band(sigma: float) -> tuple[int, int, int]:
    """``(pilot patch side, pilot group size, iterations)`` recommended for ``sigma``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if sigma > SIGMA_BANDS[-1][0]:
        log.warning("sigma=%g is above the tuned range (0, 50]; using the 30 < sigma <= 50 band", sigma)
    for upper, p, k, m in SIGMA_BANDS:
        if sigma <= upper:
            return p, k, m
    return SIGMA_BANDS[-1][1:]


@dataclass(frozen=True)
class PilotConfig:
    patch_side: int = 11
    group_size: int = 16
    method: PilotMethod = field(default_factory=PilotMethod)
    window: int = 65
    step: int = 3


def default_pilot_config(sigma: float) -> PilotConfig:
    p, k, _ = sigma_band(sigma)
    return PilotConfig(patch_side=p, group_size=k, method=PilotMethod(Pilot.NR2N, 0.5))


def denoise_groups(y_groups: np.ndarray, sigma: float, method: PilotMethod) -> np.ndarray:
    return np.matmul(y_groups, pilot_weights(y_groups, sigma, method))


def pilot_denoise(
    y,
    sigma: float,
    cfg: PilotConfig | None = None,
    threads: int = 1,
    groups: GroupSet | None = None,
) -> np.ndarray:
    """Denoise ``y`` by combining each group of similar noisy patches with closed-form weights.

    With ``method=noisy`` the identity weights make this return ``y`` itself.
    """
    y = np.asarray(y, dtype=np.float64)
    cfg = cfg or default_pilot_config(sigma)
    if cfg.method.tag is Pilot.NOISY:
        # identity weights reproduce y; skip the block matching
        return y.copy()
    gs = groups or extract_groups(y, cfg.patch_side, cfg.group_size, cfg.window, cfg.step, threads)

    def run(sl):
        yg = gather(y, gs, sl)
        return accumulate(gs, denoise_groups(yg, sigma, cfg.method) - yg, sl)

    parts = _map(run, chunks(len(gs)), threads)
    sums = np.zeros(y.size)
    for part in parts:
        sums += part
    return finish_average(gs, sums, y)


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]
