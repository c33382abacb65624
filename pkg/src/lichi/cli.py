"""``lichi`` command line: denoise, eval, curves, bias-variance."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from lichi.image import ImageFormatError, load_gray, save_gray, to_bytes
from lichi.iteration import LichiConfig, default_config, lichi_denoise, repeat_internal_adaptation
from lichi.metrics import (
    Method,
    aggregation_estimators,
    bias_variance,
    config_dict,
    config_hash,
    derive_seed,
    fig2_curve,
    fig4_curves,
    psnr,
    sweep,
)
from lichi.noise import NoiseModel, add_awgn, add_poisson_gaussian, gat_forward, vst_denoise, vst_scaling
from lichi.weights import Pilot, PilotMethod

log = logging.getLogger("lichi")

EXIT_OK, EXIT_IO, EXIT_CONFIG = 0, 1, 2
TABLE2_SIGMAS = (5.0, 15.0, 25.0, 35.0, 50.0)

# flag name -> LichiConfig override key (pilot_* go to the pilot config)
OVERRIDES = {
    "iters": "iterations",
    "patch": "patch_side",
    "group": "group_size",
    "window": "window",
    "step": "step",
    "rematch": "rematch_period",
    "t_min": "t_min",
    "pilot_patch": "pilot_patch_side",
    "pilot_group": "pilot_group_size",
}
FILE_KEYS = set(OVERRIDES) | {
    "sigma", "seed", "pilot", "alpha", "threads", "clamp", "vst", "naive_iterate", "add_noise",
}


class ConfigError(ValueError):
    pass


def _load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - FILE_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")
    return data


def _merged(args) -> dict:
    """Config file values overridden by explicitly given flags."""
    values = _load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in FILE_KEYS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            values[key] = v
    return values


def _threads(values) -> int:
    t = values.get("threads") or os.environ.get("LICHI_THREADS") or 1
    try:
        t = int(t)
    except ValueError:
        raise ConfigError(f"threads must be an integer, got {t!r}") from None
    if t < 1:
        raise ConfigError("threads must be >= 1")
    return t


def _parse_vst(spec) -> NoiseModel | None:
    if spec is None:
        return None
    if isinstance(spec, (list, tuple)):
        a, b = spec
    elif str(spec).endswith(".json"):
        return NoiseModel.from_json(spec)
    else:
        try:
            a, b = (float(v) for v in str(spec).split(","))
        except ValueError:
            raise ConfigError(f"--vst expects 'a,b' or a JSON file, got {spec!r}") from None
    model = NoiseModel(a=float(a), b=float(b))
    if not model.a > 0:
        raise ConfigError("the variance-stabilizing path needs a > 0")
    return model


def build_config(values: dict, sigma: float) -> LichiConfig:
    cfg = default_config(sigma)
    over = {v: values[k] for k, v in OVERRIDES.items() if values.get(k) is not None}
    pilot_over = {k[len("pilot_"):]: over.pop(k) for k in list(over) if k.startswith("pilot_")}
    method = cfg.pilot.method
    if values.get("pilot") is not None or values.get("alpha") is not None:
        method = PilotMethod(Pilot(values.get("pilot", method.tag)), float(values.get("alpha", method.alpha)))
    pilot = dataclasses.replace(cfg.pilot, method=method, **pilot_over)
    # the pilot shares the main search window and step unless set otherwise
    if "window" in over:
        pilot = dataclasses.replace(pilot, window=over["window"])
    if "step" in over:
        pilot = dataclasses.replace(pilot, step=min(over["step"], pilot.patch_side))
    return dataclasses.replace(cfg, pilot=pilot, **over)


def _check_geometry(cfg: LichiConfig, shape):
    for name, p, k, step in (
        ("main", cfg.patch_side, cfg.group_size, cfg.step),
        ("pilot", cfg.pilot.patch_side, cfg.pilot.group_size, cfg.pilot.step),
    ):
        if p < 1 or k < 1 or step < 1:
            raise ConfigError(f"{name} patch side, group size and step must be >= 1")
        if step > p:
            raise ConfigError(f"{name} step {step} exceeds the patch side {p}")
        if p > min(shape):
            raise ConfigError(f"{name} patch side {p} does not fit a {shape[0]}x{shape[1]} image")
        if cfg.window < 1 or cfg.window % 2 == 0:
            raise ConfigError("window must be a positive odd number")
        if k > min(cfg.window, shape[0] - p + 1) * min(cfg.window, shape[1] - p + 1):
            raise ConfigError(f"{name} group size {k} exceeds the candidates in the search window")


def _report(resolved: dict) -> str:
    h = config_hash(resolved)
    print("config: " + json.dumps(resolved, sort_keys=True))
    print(f"config_hash: {h}")
    return h


def _save_with_sidecar(img, path, resolved, h):
    save_gray(img, path)
    Path(str(path) + ".json").write_text(
        json.dumps({"config_hash": h, "config": resolved}, sort_keys=True, indent=1) + "\n"
    )


# ------------------------------------------------------------------ denoise


def cmd_denoise(args) -> int:
    values = _merged(args)
    threads = _threads(values)
    vst = _parse_vst(values.get("vst"))
    sigma = values.get("sigma")
    if vst is None:
        if sigma is None:
            raise ConfigError("--sigma is required (or --vst a,b for Poisson-Gaussian input)")
        if not sigma > 0:
            raise ConfigError("sigma must be positive")
    seed = int(values.get("seed", 0))
    add_noise = bool(values.get("add_noise"))
    if add_noise and args.gt is None:
        raise ConfigError("--add-noise needs --gt clean.png")
    if not add_noise and args.input is None:
        raise ConfigError("--in is required unless --add-noise is given")
    naive = values.get("naive_iterate")
    if naive is not None and naive < 1:
        raise ConfigError("--naive-iterate must be >= 1")

    gt = load_gray(args.gt) if args.gt else None
    if add_noise:
        y = add_poisson_gaussian(gt, vst.a, vst.b, seed) if vst else add_awgn(gt, sigma, seed)
    else:
        y = load_gray(args.input)
    if gt is not None and gt.shape != y.shape:
        raise ConfigError(f"--gt shape {gt.shape} differs from input {y.shape}")

    scaling = None
    if vst is not None:
        # the denoiser sees unit-variance noise rescaled to 0..255
        scaling = vst_scaling(gat_forward(y, vst.a, vst.b))
        sigma = scaling.sigma
    cfg = build_config(values, sigma)
    _check_geometry(cfg, y.shape)
    resolved = {
        "sigma": sigma,
        "noise": dataclasses.asdict(vst) if vst else {"sigma": sigma},
        "vst_scaling": dataclasses.asdict(scaling) if scaling else None,
        "seed": seed,
        "add_noise": add_noise,
        "naive_iterate": naive,
        "config": config_dict(cfg),
    }
    h = _report(resolved)

    def run(img, s):
        if naive:
            return repeat_internal_adaptation(img, s, naive, cfg, threads=threads)[-1]
        return lichi_denoise(img, s, cfg, threads=threads)

    if vst is None:
        out = run(y, sigma)
    else:
        out, _ = vst_denoise(y, vst.a, vst.b, run, scaling)
    if gt is not None:
        print(f"psnr noisy: {psnr(gt, y):.4f} dB")
        print(f"psnr denoised: {psnr(gt, out):.4f} dB")
        if values.get("clamp"):
            print(f"psnr denoised (clamped): {psnr(gt, to_bytes(out)):.4f} dB")
    if args.out:
        _save_with_sidecar(out, args.out, resolved, h)
    if args.noisy_out:
        _save_with_sidecar(y, args.noisy_out, resolved, h)
    return EXIT_OK


# --------------------------------------------------------------------- eval


def _sigma_list(text) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise ConfigError(f"bad sigma list {text!r}") from None
    if any(not v > 0 for v in vals):
        raise ConfigError("sigma must be positive")
    return vals


def cmd_eval(args) -> int:
    if args.reproduce in ("fig2", "fig4"):
        args.figure = args.reproduce
        return cmd_curves(args)
    values = _merged(args)
    threads = _threads(values)
    seed = int(values.get("seed", 0))
    sigmas = _sigma_list(args.sigmas) if args.sigmas else TABLE2_SIGMAS
    methods = []
    for name in (args.methods or "lichi").split(","):
        try:
            methods.append(Method(name.strip(), Pilot(values.get("pilot", "nr2n")), float(values.get("alpha", 0.5))))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if not Path(args.dataset).is_dir():
        raise FileNotFoundError(f"dataset directory not found: {args.dataset}")
    resolved = {"sigmas": sigmas, "seed": seed, "methods": [config_dict(m) for m in methods],
                "overrides": {k: values[k] for k in OVERRIDES if k in values}}
    h = _report(resolved)
    out = args.out or f"bench_{Path(args.dataset).name}_{h}.csv"
    report = sweep(
        args.dataset, sigmas, methods, out, seed=seed,
        base_config=lambda s: build_config(values, s), clamp=bool(values.get("clamp")), threads=threads,
    )
    for s in sigmas:
        for m in methods:
            print(f"sigma={s:g} {m.name}: mean psnr {report.mean_psnr(sigma=s, method=m.name):.4f} dB")
    for name, why in report.skipped:
        print(f"skipped {name}: {why}")
    print(f"wrote {out} ({len(report.rows)} rows)")
    return EXIT_OK


def cmd_curves(args) -> int:
    values = _merged(args)
    threads = _threads(values)
    seed = int(values.get("seed", 0))
    if not Path(args.dataset).is_dir():
        raise FileNotFoundError(f"dataset directory not found: {args.dataset}")
    if args.figure == "fig2":
        sigma = _sigma_list(args.sigmas)[0] if args.sigmas else 25.0
        steps = args.steps
        if steps < 1:
            raise ConfigError("--steps must be >= 1")
        cfg = build_config(values, sigma)
        h = _report({"figure": "fig2", "sigma": sigma, "steps": steps, "seed": seed, "config": config_dict(cfg)})
        out = args.out or f"fig2_{h}.csv"
        rows = fig2_curve(args.dataset, sigma, steps, out, seed=seed, cfg=cfg, threads=threads)
    else:
        sigmas = _sigma_list(args.sigmas) if args.sigmas else TABLE2_SIGMAS
        h = _report({"figure": "fig4", "sigmas": sigmas, "seed": seed})
        out = args.out or f"fig4_{h}.csv"
        rows = fig4_curves(args.dataset, sigmas, out, seed=seed, threads=threads)
    for r in rows:
        print(",".join(str(v) for v in r.values()))
    print(f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


# ------------------------------------------------------------ bias-variance


def cmd_bias_variance(args) -> int:
    values = _merged(args)
    sigma = values.get("sigma")
    if sigma is None or not sigma > 0:
        raise ConfigError("sigma must be positive")
    if args.trials < 2:
        raise ConfigError("--trials must be >= 2")
    seed = int(values.get("seed", 0))
    x = load_gray(args.gt)
    pcfg = build_config(values, sigma).pilot
    pcfg = dataclasses.replace(
        pcfg,
        patch_side=values.get("pilot_patch", 9),
        group_size=values.get("pilot_group", 18),
        method=PilotMethod(Pilot(values.get("pilot", "sure")), float(values.get("alpha", 0.5))),
    )
    h = _report({"sigma": sigma, "trials": args.trials, "seed": seed, "geometry": args.geometry,
                 "pilot": config_dict(pcfg)})
    rows = []
    estimators = aggregation_estimators(x, sigma, pcfg, args.geometry, derive_seed(seed, "select"))
    for name in ("single", "aggregated"):
        fn = estimators[name]
        r = bias_variance(fn, x, sigma, args.trials, seed)
        rows.append({"estimator": name, **dataclasses.asdict(r), "config_hash": h})
        print(f"{name}: mse={r.mse:.4f} bias2={r.squared_bias:.4f} var={r.variance:.4f} (correction {r.correction:.4f})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, with_geometry: bool = True):
    p.add_argument("--seed", type=int, help="noise seed (default 0)")
    p.add_argument("--threads", type=int, help="worker threads (env LICHI_THREADS, default 1)")
    p.add_argument("--config", help="JSON or TOML file with defaults for these flags")
    p.add_argument("--pilot", choices=[m.value for m in Pilot], help="pilot weight family")
    p.add_argument("--alpha", type=float, help="extra-noise ratio of the nr2n pilot (default 0.5)")
    p.add_argument("--clamp", action="store_true", default=None, help="also report PSNR on 8-bit output")
    if with_geometry:
        g = p.add_argument_group("geometry overrides")
        g.add_argument("--iters", type=int, help="number of iterations M")
        g.add_argument("--patch", type=int, help="main patch side (default 6)")
        g.add_argument("--group", type=int, help="main group size (default 64)")
        g.add_argument("--pilot-patch", dest="pilot_patch", type=int, help="pilot patch side")
        g.add_argument("--pilot-group", dest="pilot_group", type=int, help="pilot group size")
        g.add_argument("--window", type=int, help="search window side (default 65)")
        g.add_argument("--step", type=int, help="reference step (default 3)")
        g.add_argument("--rematch", type=int, help="rematch every N iterations (default 3)")
        g.add_argument("--t-min", dest="t_min", type=float, help="floor of the noise fraction (default 0.05)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lichi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="denoise one image")
    d.add_argument("--in", dest="input", help="noisy input image (PGM/PNG, 8-bit gray)")
    d.add_argument("--out", help="output image path")
    d.add_argument("--sigma", type=float, help="noise standard deviation")
    d.add_argument("--add-noise", dest="add_noise", action="store_true", default=None,
                   help="synthesize noise on --gt first")
    d.add_argument("--gt", help="clean image; PSNR is printed when given")
    d.add_argument("--noisy-out", dest="noisy_out", help="also save the noisy input")
    d.add_argument("--vst", help="Poisson-Gaussian parameters 'a,b' or a JSON sidecar")
    d.add_argument("--naive-iterate", dest="naive_iterate", type=int, metavar="K",
                   help="repeat internal adaptation K times instead of the progressive scheme")
    _common(d)
    d.set_defaults(func=cmd_denoise)

    for name, helptext in (("eval", "benchmark a dataset directory"), ("curves", "figure curve files")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--dataset", required=True, help="directory of 8-bit grayscale images")
        e.add_argument("--sigmas", help="comma-separated noise levels")
        e.add_argument("--out", help="CSV output path")
        e.add_argument("--steps", type=int, default=6, help="fig2: repeated adaptation steps")
        if name == "eval":
            e.add_argument("--reproduce", choices=["table2", "fig4", "fig2"], default="table2")
            e.add_argument("--methods", help="comma-separated subset of noisy,pilot,lichi")
            e.set_defaults(func=cmd_eval)
        else:
            e.add_argument("--figure", choices=["fig2", "fig4"], required=True)
            e.set_defaults(func=cmd_curves)
        _common(e)

    b = sub.add_parser("bias-variance", help="Monte Carlo bias/variance with and without aggregation")
    b.add_argument("--gt", required=True, help="clean image")
    b.add_argument("--sigma", type=float, default=20.0)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--out", help="CSV output path")
    b.add_argument("--geometry", choices=["clean", "noisy"], default="clean",
                   help="match groups once on the clean image, or on every noisy draw")
    _common(b)
    b.set_defaults(func=cmd_bias_variance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ImageFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
