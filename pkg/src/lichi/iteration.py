"""Iterated linear combinations of patches with a progressively updated pilot."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from lichi.linalg import gram, solve_spd
from lichi.patches import (
    GroupSet,
    accumulate,
    chunks,
    extract_groups,
    finish_average,
    gather,
    pixel_index,
)
from lichi.pilot import PilotConfig, _map, default_pilot_config, pilot_denoise, sigma_band

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LichiConfig:
    patch_side: int = 6
    group_size: int = 64
    iterations: int = 9
    tau_scale: float = 0.75
    window: int = 65
    step: int = 3
    rematch_period: int = 3
    t_min: float = 0.05
    pilot: PilotConfig = field(default_factory=PilotConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.tau_scale < 1:
            raise ValueError("tau_scale must lie in [0, 1)")
        if not 0 < self.t_min <= 1:
            raise ValueError("t_min must lie in (0, 1]")
        if self.rematch_period < 1:
            raise ValueError("rematch_period must be >= 1")

    def taus(self) -> np.ndarray:
        """``tau_m = tau_scale * (1 - m / M)`` for ``m = 1..M``; strictly decreasing to 0."""
        m = np.arange(1, self.iterations + 1)
        return self.tau_scale * (1.0 - m / self.iterations)


def default_config(sigma: float) -> LichiConfig:
    _, _, iters = sigma_band(sigma)
    return LichiConfig(iterations=iters, pilot=default_pilot_config(sigma))


@dataclass
class IterationState:
    z: np.ndarray
    xtilde: np.ndarray
    groups: GroupSet | None = None
    m: int = 0
    # groups per step whose estimated noise fraction fell below tau
    t_below_tau: list = field(default_factory=list)


def estimate_t(y_groups, z_groups, sigma: float, t_min: float = 0.05) -> np.ndarray:
    """Residual noise fraction ``1 - sd(Y - Z) / sigma`` per group, clipped to ``[t_min, 1]``.

    ``sd`` is the population standard deviation over all entries of a group.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    diff = np.asarray(y_groups, dtype=np.float64) - np.asarray(z_groups, dtype=np.float64)
    sd = np.std(diff, axis=(-2, -1))
    return np.clip(1.0 - sd / sigma, t_min, 1.0)


def pilot_update_weights(gx, t, sigma: float, n: int) -> np.ndarray:
    """``Xi = (Gx + n (t sigma)^2 I)^-1 Gx`` per group."""
    gx = np.asarray(gx, dtype=np.float64)
    return solve_spd(gx, n * (np.asarray(t, dtype=np.float64) * sigma) ** 2, gx)


def step_weights(gx, t, sigma: float, tau: float, n: int):
    """Pilot-update weights ``Xi`` and step weights ``Theta`` for Gram matrices ``gx``.

    ``Xi = (Gx + n (t sigma)^2 I)^-1 Gx`` and
    ``Theta = (1 - tau/t) Xi + (tau/t) I``. ``t`` is a scalar or one value per
    group. Nothing is clamped when ``t < tau``.
    """
    t = np.asarray(t, dtype=np.float64)
    k = np.shape(gx)[-1]
    xi = pilot_update_weights(gx, t, sigma, n)
    ratio = (tau / t)[..., None, None]
    theta = (1.0 - ratio) * xi + ratio * np.eye(k)
    return xi, theta


def lichi_step(state: IterationState, y, sigma: float, tau: float, cfg: LichiConfig, threads: int = 1):
    """One iteration: rematch if due, then update the estimate and the pilot in place."""
    if state.groups is None or state.m % cfg.rematch_period == 0:
        state.groups = extract_groups(
            state.z, cfg.patch_side, cfg.group_size, cfg.window, cfg.step, threads
        )
    gs = state.groups
    n = cfg.patch_side**2

    def run(sl):
        yg = gather(y, gs, sl)
        zg = gather(state.z, gs, sl)
        xg = gather(state.xtilde, gs, sl)
        t = estimate_t(yg, zg, sigma, cfg.t_min)
        xi = pilot_update_weights(gram(xg), t, sigma, n)
        zxi = np.matmul(zg, xi)
        # Z Theta = (1 - r) Z Xi + r Z, kept as deviations from z
        r = (tau / t)[:, None, None]
        idx = pixel_index(gs, sl)
        return (
            accumulate(gs, (1.0 - r) * (zxi - zg), sl, idx),
            accumulate(gs, zxi - zg, sl, idx),
            int(np.count_nonzero(t < tau)),
        )

    z_sum = np.zeros(y.size)
    x_sum = np.zeros(y.size)
    below = 0
    for zs, xs, b in _map(run, chunks(len(gs)), threads):
        z_sum += zs
        x_sum += xs
        below += b
    z_prev = state.z
    state.z = finish_average(gs, z_sum, z_prev)
    state.xtilde = finish_average(gs, x_sum, z_prev)
    state.m += 1
    state.t_below_tau.append(below)
    return state


def lichi_denoise(
    y,
    sigma: float,
    cfg: LichiConfig | None = None,
    pilot: np.ndarray | None = None,
    threads: int = 1,
    return_state: bool = False,
):
    """Denoise a grayscale image corrupted by white Gaussian noise of std ``sigma``.

    ``pilot`` overrides the initial pilot built from ``cfg.pilot``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    cfg = cfg or default_config(sigma)
    if pilot is None:
        pilot = pilot_denoise(y, sigma, cfg.pilot, threads)
    state = IterationState(z=y, xtilde=np.asarray(pilot, dtype=np.float64))
    for tau in cfg.taus():
        lichi_step(state, y, sigma, float(tau), cfg, threads)
        log.info("step %d/%d tau=%.3f groups with t<tau: %d", state.m, cfg.iterations, tau, state.t_below_tau[-1])
    return state if return_state else state.z


def repeat_internal_adaptation(
    y, sigma: float, steps: int, cfg: LichiConfig | None = None, pilot=None, threads: int = 1
) -> list[np.ndarray]:
    """Naively repeat the second stage of a two-step denoiser.

    Each step rematches on the current pilot and applies
    ``(X^T X + n sigma^2 I)^-1 X^T X`` to the noisy groups, then uses the result
    as the next pilot. Returns the ``steps`` successive estimates; the first is
    the two-step estimate.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y = np.asarray(y, dtype=np.float64)
    cfg = cfg or default_config(sigma)
    current = pilot_denoise(y, sigma, cfg.pilot, threads) if pilot is None else np.asarray(pilot, float)
    n = cfg.patch_side**2
    out = []
    for _ in range(steps):
        gs = extract_groups(current, cfg.patch_side, cfg.group_size, cfg.window, cfg.step, threads)

        def run(sl, gs=gs, current=current):
            yg = gather(y, gs, sl)
            xi = pilot_update_weights(gram(gather(current, gs, sl)), 1.0, sigma, n)
            return accumulate(gs, np.matmul(yg, xi) - yg, sl)

        sums = np.zeros(y.size)
        for part in _map(run, chunks(len(gs)), threads):
            sums += part
        current = finish_average(gs, sums, y)
        out.append(current)
    return out


def with_overrides(cfg: LichiConfig, **kw) -> LichiConfig:
    """Copy of ``cfg`` with main-loop or ``pilot_*`` fields replaced; ``None`` values are ignored."""
    kw = {k: v for k, v in kw.items() if v is not None}
    pilot_kw = {k[len("pilot_"):]: kw.pop(k) for k in list(kw) if k.startswith("pilot_")}
    pilot = replace(cfg.pilot, **pilot_kw) if pilot_kw else cfg.pilot
    return replace(cfg, pilot=pilot, **kw)
