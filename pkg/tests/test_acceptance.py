"""Acceptance suite. Each test prints one PASS/FAIL line; the lines are repeated
in the pytest terminal summary.

Dataset-backed checks read ``LICHI_SET12_DIR`` and ``LICHI_BSD68_DIR``
(defaults ``data/Set12`` and ``data/BSD68`` under the repository root).
"""

from __future__ import annotations

import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from skimage import data as skdata
from skimage.transform import downscale_local_mean

from conftest import synthetic_scene
from lichi.iteration import lichi_denoise, step_weights
from lichi.linalg import gram
from lichi.metrics import (
    aggregation_estimators,
    bias_variance,
    fig2_curve,
    fig4_curves,
    list_images,
    load_dataset,
    noisy_input,
    psnr,
)
from lichi.noise import add_poisson_gaussian, vst_denoise
from lichi.oracles import oracle_lemma1, oracle_prop1, oracle_prop4
from lichi.patches import aggregate, extract_groups, gather
from lichi.pilot import PilotConfig, default_pilot_config, pilot_denoise
from lichi.weights import Pilot, PilotMethod, ridge_form, sure_value, weights_nr2n

ROOT = Path(__file__).resolve().parents[1]
SET12 = Path(os.environ.get("LICHI_SET12_DIR", ROOT / "data" / "Set12"))
BSD68 = Path(os.environ.get("LICHI_BSD68_DIR", ROOT / "data" / "BSD68"))

# Budget bookkeeping for the property suite (criterion 6).
_PROPERTY_SECONDS: dict[str, float] = {}


def _images(path: Path) -> list[Path]:
    return list_images(path) if path.is_dir() else []


def _require(path: Path, verdict, criterion: str, expected: int | None = None):
    found = _images(path)
    if not found or (expected is not None and len(found) != expected):
        verdict(criterion, False,
                f"dataset missing at {path} ({len(found)} images found"
                f"{f', need {expected}' if expected else ''}); set the env var to a local copy")
    return found


# -- 1. Set12 table ---------------------------------------------------------

TABLE = {15: 32.71, 25: 30.24, 50: 26.81}


@pytest.mark.parametrize("sigma", sorted(TABLE))
def test_c1_set12_mean_psnr(sigma, verdict):
    _require(SET12, verdict, f"1 (sigma={sigma})", 12)
    vals, secs = [], []
    for path, x in load_dataset(SET12):
        y = noisy_input(x, sigma, 0, path.name)
        t0 = time.perf_counter()
        est = lichi_denoise(y, sigma)
        secs.append((time.perf_counter() - t0) * 65536 / x.size)
        vals.append(psnr(x, est))
    got = float(np.mean(vals))
    verdict(f"1 (sigma={sigma})", abs(got - TABLE[sigma]) <= 0.15,
            f"Set12 mean {got:.3f} dB vs {TABLE[sigma]} +/- 0.15; "
            f"{np.mean(secs):.1f} s per 256x256 (informational)")


# -- 2. BSD68 ---------------------------------------------------------------

def test_c2_bsd68(verdict):
    _require(BSD68, verdict, "2", 68)
    vals = [psnr(x, lichi_denoise(noisy_input(x, 15, 0, p.name), 15)) for p, x in load_dataset(BSD68)]
    got = float(np.mean(vals))
    verdict("2", abs(got - 31.41) <= 0.2, f"BSD68 sigma=15 mean {got:.3f} dB vs 31.41 +/- 0.2")


# -- 3. noisy-input PSNR ----------------------------------------------------

def _stand_ins() -> list[tuple[str, np.ndarray]]:
    """Twelve 8-bit grayscale stand-ins: the noisy PSNR does not depend on content."""
    srcs = {
        "camera": skdata.camera(), "moon": skdata.moon(), "brick": skdata.brick(),
        "grass": skdata.grass(), "gravel": skdata.gravel(), "coins": skdata.coins(),
    }
    out = []
    for name, img in srcs.items():
        out.append((f"{name}_a", img[:256, :256].astype(np.float64)))
        out.append((f"{name}_b", img[-256:, -256:].astype(np.float64)))
    return out


def test_c3_noisy_input_psnr(verdict):
    if len(_images(SET12)) == 12:
        images, label = [(p.name, x) for p, x in load_dataset(SET12)], "Set12"
    else:
        images, label = _stand_ins(), "12 stand-in images (Set12 not found)"
    lines, ok = [], True
    for sigma in (5, 15, 25, 35, 50):
        got = float(np.mean([psnr(x, noisy_input(x, sigma, 0, name)) for name, x in images]))
        want = 20 * math.log10(255 / sigma)
        ok &= abs(got - want) <= 0.03
        lines.append(f"{sigma}:{got:.3f}/{want:.3f}")
    verdict("3", ok, f"{label}, noisy PSNR measured/analytic {' '.join(lines)} (tolerance 0.03 dB)")


# -- 4. repeated internal adaptation ---------------------------------------

def test_c4_repeated_adaptation_peaks(verdict):
    _require(SET12, verdict, "4", 12)
    rows = fig2_curve(SET12, 25, 5)
    seq = [r["psnr_db"] for r in rows]
    peak = int(np.argmax(seq))
    ok = peak <= 3 and all(a > b for a, b in zip(seq[peak:], seq[peak + 1:]))
    verdict("4", ok, f"PSNR by step {seq}, peak at step {peak}")


# -- 5. pilot ordering at sigma 50 -----------------------------------------

def test_c5_pilot_ordering(verdict):
    _require(SET12, verdict, "5", 12)
    rows = fig4_curves(SET12, [50], pilots=(Pilot.NOISY, Pilot.NR2N, Pilot.SURE))
    final = {r["pilot"]: r["psnr_db"] for r in rows if r["level"] == "lichi"}
    ok = final["noisy"] < final["nr2n"] and abs(final["sure"] - final["nr2n"]) < 0.1
    verdict("5", ok, f"post-iteration PSNR at sigma=50: {final}")


# -- 6. property suite ------------------------------------------------------

@pytest.fixture
def budget(request):
    t0 = time.perf_counter()
    yield
    _PROPERTY_SECONDS[request.node.name] = time.perf_counter() - t0


def test_c6a_ridge_closed_form(budget, verdict):
    rng = np.random.default_rng(601)
    worst = 0.0
    for _ in range(100):
        n, k = int(rng.integers(4, 20)), int(rng.integers(1, 8))
        a = rng.standard_normal((n, k)) * rng.uniform(0.5, 20)
        lam, mu = rng.uniform(0.01, 10) * n, rng.uniform(-5, 5) * n
        ref = oracle_lemma1(a, lam, mu)
        got = ridge_form(gram(a), lam, mu)
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    verdict("6a", worst <= 1e-9, f"100 cases, max relative deviation {worst:.2e} (<= 1e-9)")


def test_c6b_progressive_weights_monte_carlo(budget, verdict):
    rng = np.random.default_rng(602)
    sizes = (1_000, 10_000, 100_000)
    cases = []
    for _ in range(6):
        n, k = 12, 4
        x = rng.standard_normal((n, k)) * 2
        sigma, t = rng.uniform(0.5, 2), rng.uniform(0.4, 1)
        tau = rng.uniform(0, t)
        cases.append((x, sigma, t, tau, step_weights(gram(x), t, sigma, tau, n)[1]))
    devs = []
    for s in sizes:
        d = [np.linalg.norm(oracle_prop1(x, sg, t, tau, s, seed=j) - closed)
             for j, (x, sg, t, tau, closed) in enumerate(cases)]
        devs.append(float(np.mean(d)))
    slope = float(np.polyfit(np.log10(sizes), np.log10(devs), 1)[0])
    ok = devs[0] > devs[1] > devs[2] and -0.75 <= slope <= -0.25
    verdict("6b", ok, f"mean deviation {[f'{v:.2e}' for v in devs]}, log-log slope {slope:.2f} "
            "(expect about -0.5)")


def test_c6c_sure_unbiased(budget, verdict):
    rng = np.random.default_rng(603)
    draws, misses, worst = 20_000, 0, 0.0
    for _ in range(50):
        n, k = int(rng.integers(4, 16)), int(rng.integers(2, 6))
        x = rng.standard_normal((n, k)) * rng.uniform(0.5, 5)
        theta = rng.standard_normal((k, k)) * 0.5
        sigma = rng.uniform(0.2, 3)
        y = x + sigma * rng.standard_normal((draws, n, k))
        s = sure_value(y, theta, sigma)
        r = x @ theta - x
        risk = np.sum(r * r) + n * sigma**2 * np.sum(theta * theta)
        z = abs(s.mean() - risk) / (s.std(ddof=1) / math.sqrt(draws))
        worst = max(worst, z)
        misses += z > 3
    verdict("6c", misses == 0, f"50 cases, worst |mean - risk| = {worst:.2f} standard errors (<= 3)")


def test_c6d_nr2n_identity(budget, verdict):
    rng = np.random.default_rng(604)
    worst = 0.0
    for _ in range(100):
        n, k = int(rng.integers(8, 40)), int(rng.integers(2, 8))
        y = rng.standard_normal((n, k)) * rng.uniform(1, 30)
        sigma, alpha = rng.uniform(0.5, 20), rng.uniform(0.25, 2)
        hat = ridge_form(gram(y), n * (alpha * sigma) ** 2, 0.0)
        lhs = ((1 + alpha**2) * hat - np.eye(k)) / alpha**2
        worst = max(worst, float(np.max(np.abs(lhs - weights_nr2n(y, sigma, alpha)))))
    verdict("6d", worst <= 1e-12, f"100 cases, max abs deviation {worst:.2e} (<= 1e-12)")


def test_c6e_averaging_optimal(budget, verdict):
    rng = np.random.default_rng(605)
    failed = []
    for i in range(20):
        n, k = int(rng.integers(4, 20)), int(rng.integers(2, 8))
        x = np.repeat(rng.standard_normal((n, 1)) * 10, k, axis=1)
        rep = oracle_prop4(x, float(rng.uniform(0.5, 5)), 10_000, seed=i)
        if not rep.passed:
            failed.append(rep.case_id)
    verdict("6e", not failed, f"20 cases x 1e4 stochastic candidates, failures: {failed or 'none'}")


def test_c6_time_budget(verdict):
    missing = {f"c6{c}" for c in "abcde"} - {k[5:8] for k in _PROPERTY_SECONDS}
    total = sum(_PROPERTY_SECONDS.values())
    verdict("6 (time)", not missing and total < 60,
            f"property suite took {total:.1f} s (< 60)" + (f", not run: {sorted(missing)}" if missing else ""))


# -- 7. structural invariants ----------------------------------------------

def test_c7_aggregation_identity(verdict):
    img = np.random.default_rng(71).uniform(-1e3, 1e3, (97, 83))
    gs = extract_groups(img, 6, 16, 21, 3)
    same = np.array_equal(aggregate(gs, gather(img, gs)), img)
    verdict("7 (aggregation identity)", same, "aggregate(gather(img)) == img bit for bit on 97x83 random floats")


@pytest.fixture(scope="module")
def crop():
    return skdata.camera()[160:288, 200:328].astype(np.float64)


def test_c7_thread_determinism(crop, verdict):
    y = noisy_input(crop, 25, 3, "crop")
    a = lichi_denoise(y, 25, threads=1)
    b = lichi_denoise(y, 25, threads=3)
    verdict("7 (thread determinism)", np.array_equal(a, b), "threads=1 and threads=3 outputs are bit-identical")


def test_c7_seed_determinism(crop, tmp_path, verdict):
    from lichi.image import save_gray

    src = tmp_path / "in.png"
    save_gray(crop, src)

    def run(seed, tag):
        out = tmp_path / f"{tag}.png"
        subprocess.run(
            [sys.executable, "-m", "lichi.cli", "denoise", "--gt", str(src), "--out", str(out),
             "--sigma", "25", "--add-noise", "--seed", str(seed)],
            check=True, capture_output=True,
        )
        return out.read_bytes()

    first, again, other = run(11, "a"), run(11, "b"), run(12, "c")
    ok = first == again and first != other
    verdict("7 (seed determinism)", ok, "CLI runs with equal seeds are byte-identical, a different seed differs")


def test_c7_bias_variance_identity(crop, verdict):
    cfg = default_pilot_config(20)
    res = bias_variance(lambda y: pilot_denoise(y, 20, cfg), crop[:64, :64], 20, 20, seed=5)
    ok = res.identity_gap <= res.correction
    verdict("7 (bias-variance identity)", ok,
            f"|mse - (bias^2 + var)| = {res.identity_gap:.2e} <= correction {res.correction:.3f}")


def test_c7_aggregation_reduces_variance(verdict):
    x = downscale_local_mean(skdata.camera().astype(np.float64), (2, 2))
    cfg = PilotConfig(9, 18, PilotMethod(Pilot.SURE), 65, 3)
    est = aggregation_estimators(x, 20, cfg)
    single = bias_variance(est["single"], x, 20, 100, seed=8)
    agg = bias_variance(est["aggregated"], x, 20, 100, seed=8)
    ratio = single.variance / agg.variance
    change = abs(agg.squared_bias - single.squared_bias) / single.squared_bias
    verdict("7 (aggregation variance)", ratio > 2 and change < 0.15,
            f"variance {single.variance:.1f} -> {agg.variance:.1f} ({ratio:.2f}x, > 2), "
            f"squared bias {single.squared_bias:.2f} -> {agg.squared_bias:.2f} ({change:.1%}, < 15%)")


# -- 8. Poisson-Gaussian path ----------------------------------------------

def test_c8_vst_gain(verdict):
    x = synthetic_scene(128)
    a, b = 0.05, 4.0
    y = add_poisson_gaussian(x, a, b, seed=81)
    est, sc = vst_denoise(y, a, b, lambda img, s: lichi_denoise(img, s))
    before, after = psnr(x, y), psnr(x, est)
    verdict("8", after - before >= 3, f"noisy {before:.2f} dB -> {after:.2f} dB "
            f"(+{after - before:.2f}, >= 3); working sigma {sc.sigma:.2f}")
