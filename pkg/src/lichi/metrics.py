"""PSNR, Monte Carlo bias/variance, dataset sweeps and curve files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lichi.image import load_gray, to_bytes
from lichi.iteration import LichiConfig, default_config, lichi_denoise, repeat_internal_adaptation
from lichi.noise import add_awgn
from lichi.patches import (
    accumulate,
    chunks,
    extract_groups,
    finish_average,
    gather,
    select_single,
    single_choice,
)
from lichi.pilot import PilotConfig, _map, denoise_groups, pilot_denoise
from lichi.weights import Pilot, PilotMethod

log = logging.getLogger(__name__)

BENCH_HEADER = (
    "dataset", "image", "sigma", "method", "pilot", "iterations", "psnr_db", "wall_s", "config_hash"
)
IMAGE_SUFFIXES = (".png", ".pgm")


def psnr(x, xhat, peak: float = 255.0) -> float:
    """``10 log10(peak^2 d / ||xhat - x||^2)``; ``inf`` for identical images."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xhat.shape}")
    sse = float(np.sum((xhat - x) ** 2))
    if sse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 * x.size / sse)


def psnr_from_mse(mse: float, peak: float = 255.0) -> float:
    return math.inf if mse == 0 else 10.0 * math.log10(peak**2 / mse)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_dict(obj) -> dict:
    return _jsonable(obj)


def config_hash(obj) -> str:
    """Short stable hash of a (nested) configuration."""
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def derive_seed(*parts) -> int:
    """64-bit seed from arbitrary printable parts, e.g. ``(run_seed, image, sigma)``."""
    blob = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(blob.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class BiasVarianceResult:
    """Per-pixel averaged Monte Carlo estimates.

    ``variance`` uses the unbiased ``T - 1`` divisor and ``squared_bias`` is
    corrected by ``correction = variance / T`` (the noise the trial mean still
    carries), so ``mse == squared_bias + variance`` up to rounding.
    """

    mse: float
    squared_bias: float
    variance: float
    correction: float
    trials: int

    @property
    def identity_gap(self) -> float:
        return abs(self.mse - (self.squared_bias + self.variance))


def bias_variance(
    denoiser: Callable[[np.ndarray], np.ndarray], x, sigma: float, trials: int, seed: int = 0
) -> BiasVarianceResult:
    if trials < 2:
        raise ValueError("trials must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    mean = np.zeros_like(x)
    m2 = np.zeros_like(x)
    sq_err = 0.0
    for i in range(trials):
        est = np.asarray(denoiser(add_awgn(x, sigma, derive_seed(seed, "trial", i))), dtype=np.float64)
        sq_err += float(np.mean((est - x) ** 2))
        # Welford update
        delta = est - mean
        mean += delta / (i + 1)
        m2 += delta * (est - mean)
    variance = float(np.mean(m2)) / (trials - 1)
    correction = variance / trials
    raw_bias = float(np.mean((mean - x) ** 2))
    return BiasVarianceResult(
        mse=sq_err / trials,
        squared_bias=raw_bias - correction,
        variance=variance,
        correction=correction,
        trials=trials,
    )


# ---------------------------------------------------------------- datasets


def list_images(dataset_dir) -> list[Path]:
    d = Path(dataset_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(dataset_dir, skipped: list | None = None):
    """``(path, image)`` pairs in name order; unreadable files are logged and skipped."""
    out = []
    for path in list_images(dataset_dir):
        try:
            out.append((path, load_gray(path)))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            if skipped is not None:
                skipped.append((path.name, str(exc)))
    return out


def noisy_input(x, sigma: float, run_seed: int, name: str) -> np.ndarray:
    """Noisy copy of ``x`` shared by every method evaluated on (image, sigma)."""
    return add_awgn(x, sigma, derive_seed(run_seed, name, sigma))


@dataclass(frozen=True)
class Method:
    """What a sweep runs: ``noisy`` input, the ``pilot`` alone, or full ``lichi``."""

    name: str
    pilot: Pilot = Pilot.NR2N
    alpha: float = 0.5

    def __post_init__(self):
        if self.name not in ("noisy", "pilot", "lichi"):
            raise ValueError(f"unknown method {self.name!r}")
        object.__setattr__(self, "pilot", Pilot(self.pilot))

    def config(self, sigma: float, base: LichiConfig | None = None) -> LichiConfig:
        cfg = base or default_config(sigma)
        return dataclasses.replace(
            cfg, pilot=dataclasses.replace(cfg.pilot, method=PilotMethod(self.pilot, self.alpha))
        )

    def run(self, y, sigma: float, cfg: LichiConfig, threads: int = 1) -> np.ndarray:
        if self.name == "noisy":
            return y
        if self.name == "pilot":
            return pilot_denoise(y, sigma, cfg.pilot, threads)
        return lichi_denoise(y, sigma, cfg, threads=threads)


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    clamp: bool = False

    @property
    def header(self) -> tuple[str, ...]:
        return BENCH_HEADER + (("psnr_clamped_db",) if self.clamp else ())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.header, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows)

    def mean_psnr(self, **match) -> float:
        vals = [r["psnr_db"] for r in self.rows if all(r[k] == v for k, v in match.items())]
        if not vals:
            raise KeyError(f"no rows match {match}")
        return float(np.mean(vals))


def sweep(
    dataset_dir,
    sigmas: Sequence[float],
    methods: Sequence[Method],
    out_csv=None,
    seed: int = 0,
    base_config: Callable[[float], LichiConfig] | None = None,
    clamp: bool = False,
    threads: int = 1,
) -> BenchReport:
    """Run every method on every image and noise level of ``dataset_dir``.

    Rows follow dataset order, then sigma, then method. Unreadable images are
    skipped with a warning and listed in ``report.skipped``.
    """
    dataset = Path(dataset_dir).name
    report = BenchReport(clamp=clamp)
    for path, x in load_dataset(dataset_dir, report.skipped):
        for sigma in sigmas:
            y = noisy_input(x, sigma, seed, path.name)
            for method in methods:
                cfg = method.config(sigma, base_config(sigma) if base_config else None)
                t0 = time.perf_counter()
                est = method.run(y, sigma, cfg, threads)
                wall = time.perf_counter() - t0
                row = {
                    "dataset": dataset,
                    "image": path.stem,
                    "sigma": sigma,
                    "method": method.name,
                    "pilot": method.pilot.value if method.name != "noisy" else "",
                    "iterations": cfg.iterations if method.name == "lichi" else 0,
                    "psnr_db": round(psnr(x, est), 4),
                    "wall_s": round(wall, 3),
                    "config_hash": config_hash({"sigma": sigma, "seed": seed, "config": cfg}),
                }
                if clamp:
                    row["psnr_clamped_db"] = round(psnr(x, to_bytes(est)), 4)
                log.info("%s sigma=%g %s: %.2f dB", path.stem, sigma, method.name, row["psnr_db"])
                report.rows.append(row)
    if out_csv is not None:
        report.write_csv(out_csv)
    return report


# ------------------------------------------------------------ figure curves


def pilot_levels(x, y, sigma: float, cfg: PilotConfig, threads: int = 1):
    """Pilot quality before and after aggregation.

    Returns ``(group_mse, pilot_image)`` where ``group_mse`` is the mean
    squared error of the denoised groups against the clean groups at the same
    positions.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if cfg.method.tag is Pilot.NOISY:
        return float(np.mean((y - x) ** 2)), y.copy()
    gs = extract_groups(y, cfg.patch_side, cfg.group_size, cfg.window, cfg.step, threads)

    def run(sl):
        yg = gather(y, gs, sl)
        est = denoise_groups(yg, sigma, cfg.method)
        err = float(np.sum((est - gather(x, gs, sl)) ** 2))
        return err, accumulate(gs, est - yg, sl)

    sums = np.zeros(y.size)
    err = 0.0
    for e, s in _map(run, chunks(len(gs)), threads):
        err += e
        sums += s
    count = len(gs) * cfg.patch_side**2 * cfg.group_size
    return err / count, finish_average(gs, sums, y)


def aggregation_estimators(x, sigma: float, cfg: PilotConfig, geometry: str = "clean", seed: int = 0):
    """Pilot-weight estimators with and without aggregation, for bias/variance studies.

    ``geometry="clean"`` matches groups once on ``x`` and reuses them for every
    noise draw, so both estimators are linear in the noisy image; ``"noisy"``
    rematches on each draw. Returns ``{"single": f, "aggregated": f}``.
    """
    if geometry not in ("clean", "noisy"):
        raise ValueError("geometry must be 'clean' or 'noisy'")
    fixed = choice = None
    if geometry == "clean":
        fixed = extract_groups(x, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)
        choice = single_choice(fixed, seed)

    def groups(y):
        return fixed if fixed is not None else extract_groups(y, cfg.patch_side, cfg.group_size, cfg.window, cfg.step)

    def single(y):
        gs = groups(y)
        est = denoise_groups(gather(y, gs), sigma, cfg.method)
        return select_single(gs, est, seed, choice)

    def aggregated(y):
        return pilot_denoise(y, sigma, cfg, groups=groups(y))

    return {"single": single, "aggregated": aggregated}


FIG4_LEVELS = ("group", "aggregated", "lichi")
FIG4_PILOTS = (Pilot.SURE, Pilot.NR2N, Pilot.AVG, Pilot.NOISY)


def fig4_curves(dataset_dir, sigmas, out_csv=None, seed: int = 0, pilots=FIG4_PILOTS, threads: int = 1):
    """Average PSNR per (sigma, pilot, level); levels are group, aggregated, lichi."""
    images = [(p.name, x) for p, x in load_dataset(dataset_dir)]
    rows = []
    for sigma in sigmas:
        for tag in pilots:
            cfg = Method("lichi", tag).config(sigma)
            acc = {lvl: [] for lvl in FIG4_LEVELS}
            for name, x in images:
                y = noisy_input(x, sigma, seed, name)
                gmse, pil = pilot_levels(x, y, sigma, cfg.pilot, threads)
                acc["group"].append(psnr_from_mse(gmse))
                acc["aggregated"].append(psnr(x, pil))
                acc["lichi"].append(psnr(x, lichi_denoise(y, sigma, cfg, pilot=pil, threads=threads)))
            h = config_hash({"sigma": sigma, "seed": seed, "config": cfg})
            for lvl in FIG4_LEVELS:
                rows.append(
                    {"sigma": sigma, "pilot": tag.value, "level": lvl,
                     "psnr_db": round(float(np.mean(acc[lvl])), 4), "config_hash": h}
                )
    if out_csv is not None:
        _write_rows(out_csv, rows)
    return rows


def fig2_curve(dataset_dir, sigma: float, steps: int, out_csv=None, seed: int = 0,
               cfg: LichiConfig | None = None, threads: int = 1):
    """Average PSNR of the pilot (step 0) and of ``steps`` repeated internal adaptations."""
    cfg = cfg or default_config(sigma)
    per_step = [[] for _ in range(steps + 1)]
    for path, x in load_dataset(dataset_dir):
        y = noisy_input(x, sigma, seed, path.name)
        pil = pilot_denoise(y, sigma, cfg.pilot, threads)
        outs = [pil] + repeat_internal_adaptation(y, sigma, steps, cfg, pilot=pil, threads=threads)
        for i, img in enumerate(outs):
            per_step[i].append(psnr(x, img))
    h = config_hash({"sigma": sigma, "seed": seed, "steps": steps, "config": cfg})
    rows = [
        {"step": i, "stage": "pilot" if i == 0 else "internal_adaptation",
         "psnr_db": round(float(np.mean(v)), 4), "config_hash": h}
        for i, v in enumerate(per_step)
    ]
    if out_csv is not None:
        _write_rows(out_csv, rows)
    return rows


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
