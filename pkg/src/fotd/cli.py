"""Command line interface: run and validate desk-scale experiments.

    fotd run --case rossler --r 2 --with-otd-baseline
    fotd run --case ks --preset desk --r 1,3,5
    fotd run --case reactive --preset desk --r 8
    fotd validate --case ks --dt 0.03

Exit codes: 0 success, 2 configuration error, 3 numeric failure. The
output root defaults to ./fotd_runs and can be overridden with the
FOTD_OUTPUT_ROOT environment variable or --outdir.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import CASES, RunConfig, validate
from .runner import EXIT_CONFIG, EXIT_OK, run


def _add_common(p):
    p.add_argument("--case", required=True, choices=CASES)
    p.add_argument("--preset", default="desk")
    p.add_argument("--r", default="2",
                   help="rank, or comma list for a sweep (e.g. 1,3,5)")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--stride", type=int, default=None,
                   help="snapshot every N steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps-reg", type=float, default=1e-12)
    p.add_argument("--no-oracle", action="store_true",
                   help="skip the full sensitivity track")
    p.add_argument("--with-otd-baseline", action="store_true")
    p.add_argument("--with-fd-check", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--coeff-snapshots", type=int, default=4)
    p.add_argument("--extra-singulars", type=int, default=5)
    p.add_argument("--velocity-file", default=None)
    p.add_argument("--outdir", default=None)


def _parse_ranks(text):
    try:
        ranks = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise SystemExit(EXIT_CONFIG)
    if not ranks:
        raise SystemExit(EXIT_CONFIG)
    return ranks


def _configs(args):
    ranks = _parse_ranks(args.r)
    sweep = len(ranks) > 1
    configs = []
    for rank in ranks:
        outdir = args.outdir
        if outdir is not None and sweep:
            outdir = os.path.join(outdir, f"r{rank}")
        configs.append(RunConfig(
            case=args.case, preset=args.preset, rank=rank, dt=args.dt,
            horizon=args.horizon, stride=args.stride, seed=args.seed,
            eps_reg=args.eps_reg, with_oracle=not args.no_oracle,
            with_otd_baseline=args.with_otd_baseline,
            with_fd_check=args.with_fd_check, figures=not args.no_figures,
            oracle_extra_singulars=args.extra_singulars,
            coeff_snapshots=args.coeff_snapshots, outdir=outdir,
            velocity_file=args.velocity_file,
        ))
    return configs


def cmd_run(args):
    configs = _configs(args)
    for config in configs:
        issues = validate(config)
        if issues:
            for issue in issues:
                print(f"config error: {issue}", file=sys.stderr)
            return EXIT_CONFIG
    if len(configs) == 1 or args.workers == 1:
        codes = [run(c) for c in configs]
    else:
        workers = args.workers or min(len(configs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(run, configs))
    for config, code in zip(configs, codes):
        status = "ok" if code == EXIT_OK else f"failed ({code})"
        print(f"{config.resolved_outdir()}: {status}")
    return max(codes)


def cmd_validate(args):
    configs = _configs(args)
    any_bad = False
    for config in configs:
        issues = validate(config)
        label = f"{config.case} preset={config.preset} r={config.rank}"
        if issues:
            any_bad = True
            for issue in issues:
                print(f"{label}: {issue}")
        else:
            print(f"{label}: ok")
    return EXIT_CONFIG if any_bad else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fotd",
        description="Low-rank forward sensitivity experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a run or rank sweep")
    _add_common(p_run)
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel sweep members (default: one per rank)")
    p_run.set_defaults(func=cmd_run)
    p_val = sub.add_parser("validate", help="check a configuration")
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
