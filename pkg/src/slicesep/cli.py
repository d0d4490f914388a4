"""Command-line interface.

Subcommands cover the full workflow: synthesize a phantom, separate a pair
of observations, inspect spectra, map run-to-run uncertainty, and check the
gradient engine. Exit codes: 0 success, 1 run failure, 2 configuration or
input error.
"""

import argparse
import dataclasses
import os
import sys

from .analysis import power_spectrum, streak_energy
from .config import config_from_text
from .errors import (
    ConfigurationError,
    NonFiniteGradientError,
    RawFormatError,
    TrainingDivergedError,
    UsageError,
)
from .imaging import ImagePlane, load_raw, save_raw

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _fresh_seed():
    import secrets

    return secrets.randbits(32)


CONFIG_FLAGS = (
    # (flag, config key, type, help)
    ("--input1", "input1", str, "first observed image (.f32)"),
    ("--input2", "input2", str, "second observed image (.f32)"),
    ("--out", "out_dir", str, "run directory for all outputs"),
    ("--gamma-excl", "gamma_excl", float, "exclusion weight"),
    ("--epochs", "epochs", int, "training epochs"),
    ("--filter-mode", "filter_mode", str, "single_kernel or shallow_dip"),
    ("--lowpass-slice", "lowpass_slice", int, "slice whose ghost is low-pass (1 or 2)"),
    ("--lr", "learning_rate", float, "optimizer learning rate"),
    ("--seed", "seed", int, "run seed (recorded; generated when omitted)"),
    ("--depth", "depth", int, "generator depth"),
    ("--channels", "channels", str, "comma-separated channels per level"),
    ("--skip-channels", "skip_channels", int, "skip branch channels"),
    ("--checkpoint-interval", "checkpoint_interval", int, "epochs between checkpoints"),
)


def _add_config_flags(sub):
    sub.add_argument("--config", help="key=value configuration file")
    for flag, _key, typ, help_text in CONFIG_FLAGS:
        sub.add_argument(flag, type=typ, default=None, help=help_text)
    sub.add_argument(
        "--force", action="store_true", help="reuse a non-empty run directory"
    )


def _resolve_config(args):
    """File settings first, flags on top; a seed is minted if nobody gave one."""
    overrides = {}
    for flag, key, _typ, _help in CONFIG_FLAGS:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            overrides[key] = value
    file_text = ""
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_text = fh.read()
        except OSError as exc:
            raise ConfigurationError(
                f"cannot read configuration file {args.config}: {exc}"
            ) from exc
    seeded = "seed" in overrides or any(
        line.strip().startswith("seed=") for line in file_text.splitlines()
    )
    if not seeded:
        overrides["seed"] = _fresh_seed()
    return config_from_text(file_text, overrides)


def _load_pair(cfg):
    if not cfg.input1 or not cfg.input2:
        raise ConfigurationError("both input1 and input2 are required")
    return load_raw(cfg.input1), load_raw(cfg.input2)


def _require_out(cfg_or_path):
    path = cfg_or_path if isinstance(cfg_or_path, str) else cfg_or_path.out_dir
    if not path:
        raise ConfigurationError("an output directory is required (--out)")
    return path


def cmd_separate(args):
    from .training import persist_run, prepare_run_dir, run_separation

    cfg = _resolve_config(args)
    i1, i2 = _load_pair(cfg)
    run_dir = prepare_run_dir(_require_out(cfg), force=args.force)
    report = run_separation(cfg, i1, i2, checkpoint_dir=run_dir)
    report_path = persist_run(report, run_dir)
    print(
        f"separation finished: alpha1={report.alpha1:.4f} alpha2={report.alpha2:.4f}"
    )
    print(f"report: {report_path}")
    return EXIT_OK


def cmd_phantom(args):
    from .phantom import (
        PhantomSpec,
        generate,
        persist,
        scoring_dc_radius,
        spec_from_text,
    )
    from .training import prepare_run_dir

    if args.spec:
        try:
            with open(args.spec, "r", encoding="utf-8") as fh:
                spec = spec_from_text(fh.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read spec file {args.spec}: {exc}") from exc
    else:
        spec = PhantomSpec()
    updates = {}
    if args.size is not None:
        updates["size"] = args.size
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        spec = dataclasses.replace(spec, **updates)
    out = prepare_run_dir(_require_out(args.out), force=args.force)
    bundle = generate(spec)
    persist(bundle, out)
    print(
        f"phantom written to {out}: size={spec.size} seed={spec.seed} "
        f"streak_direction={spec.streak_direction_deg:g} "
        f"scoring_dc_radius={scoring_dc_radius(spec)}"
    )
    return EXIT_OK


def cmd_spectrum(args):
    from . import figures
    from .training import prepare_run_dir

    img = load_raw(args.input)
    out = prepare_run_dir(_require_out(args.out), force=args.force)
    spec = power_spectrum(img)
    fraction = streak_energy(
        spec,
        direction_deg=args.direction,
        half_width_bins=args.half_width,
        dc_radius_bins=args.dc_radius,
    )
    save_raw(
        ImagePlane(spec.values, label="spectrum"), os.path.join(out, "spectrum")
    )
    figures.render_spectrum(
        spec, os.path.join(out, "spectrum.png"), title=f"spectrum of {img.label}"
    )
    csv_path = os.path.join(out, "streak.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("direction_deg,half_width_bins,dc_radius_bins,band_fraction\n")
        dc = args.dc_radius if args.dc_radius is not None else 2 * args.half_width + 1
        fh.write(f"{args.direction!r},{args.half_width},{dc},{fraction!r}\n")
    print(f"band fraction at {args.direction:g} deg: {fraction:.6f}")
    print(f"outputs: {out}")
    return EXIT_OK


def cmd_uncertainty(args):
    from .training import persist_uncertainty, prepare_run_dir, run_uncertainty

    cfg = _resolve_config(args)
    i1, i2 = _load_pair(cfg)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    out = prepare_run_dir(_require_out(cfg), force=args.force)
    report = run_uncertainty(
        cfg, i1, i2, n_runs=args.n_runs, gammas=gammas,
        out_dir=out, n_workers=args.workers,
    )
    persist_uncertainty(report, out)
    series = ", ".join(f"{g:g}: {m:.5f}" for g, m in zip(report.gammas, report.mean_std_series))
    print(f"mean std by gamma: {series}")
    print(f"outputs: {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed)
    width = max(len(name) for name, _, _, _ in results)
    failures = 0
    for name, err, tol, passed in results:
        status = "ok" if passed else "FAIL"
        print(f"{name:<{width}}  max rel {err:.3e}  (tol {tol:.0e})  {status}")
        failures += not passed
    if failures:
        print(f"{failures} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_RUN_FAILURE
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slicesep",
        description="Blind separation of cross-contaminated image slice pairs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="train the generator stack on one pair")
    _add_config_flags(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("phantom", help="generate a synthetic two-slice test pair")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--spec", help="phantom spec file (key=value)")
    p.add_argument("--size", type=int, default=None, help="image side length")
    p.add_argument("--seed", type=int, default=None, help="phantom seed")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("spectrum", help="power spectrum and band-energy metric")
    p.add_argument("--input", required=True, help="image to analyze (.f32)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--direction", type=float, default=0.0, help="band angle, degrees")
    p.add_argument("--half-width", type=int, default=2, help="band half width, bins")
    p.add_argument("--dc-radius", type=int, default=None, help="excluded center radius")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("uncertainty", help="repeat runs per weight, map the spread")
    _add_config_flags(p)
    p.add_argument("--n-runs", type=int, default=5, help="repeats per weight")
    p.add_argument(
        "--gammas", default="0.04,0.1,0.2,0.4", help="comma-separated weights"
    )
    p.add_argument("--workers", type=int, default=1, help="parallel run workers")
    p.set_defaults(func=cmd_uncertainty)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, UsageError, RawFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (TrainingDivergedError, NonFiniteGradientError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
