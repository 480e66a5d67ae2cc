"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 input error, 4 numerical
failure, 5 output not writable.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, RunConfig, load_config
from .pipeline import (NUMERICAL_ERRORS, InputError, OutputError, cmd_assess, cmd_crossval, cmd_fit, cmd_impute,
                       cmd_simulate, cmd_synthetic, cmd_trend)

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OUTPUT = 0, 2, 3, 4, 5

logger = logging.getLogger("precip_hmm")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--workers", type=int, help="parallel chain workers")
    common.add_argument("--output", help="override the output directory")
    common.add_argument("--resume", action="store_true", help="continue chains from their checkpoints")
    common.add_argument("--plots", action="store_true", help="also render figures (needs matplotlib)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="precip-hmm", description="Spline-based HMM daily precipitation generator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="run the MCMC chains")
    sub.add_parser("assess", parents=[common], help="posterior-predictive checks and convergence tables")
    sub.add_parser("crossval", parents=[common], help="held-out-year comparison of model variants")
    sub.add_parser("trend", parents=[common], help="imputation and posterior trend analysis")
    for name, what in (("simulate", "simulated series"), ("impute", "FFBS-completed series")):
        s = sub.add_parser(name, parents=[common], help=f"write {what}")
        s.add_argument("-n", type=int, default=10, help="number of series (0 = one per draw)")
    s = sub.add_parser("plot", help="render figures from an output directory")
    s.add_argument("--output", required=True)
    s.add_argument("-v", "--verbose", action="store_true")
    s = sub.add_parser("synthetic", help="write a synthetic station CSV from the default constant model")
    s.add_argument("path")
    s.add_argument("--years", type=int, default=20)
    s.add_argument("--first-year", type=int, default=2002)
    s.add_argument("--season", default="JJA")
    s.add_argument("--family", default="gamma", choices=("gamma", "gpd"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--missing-rate", type=float, default=0.0)
    s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output is not None:
        cfg.output = args.output
    cfg.validate()
    return cfg


def _render(output) -> None:
    from .plotting import render_all

    render_all(output)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            _render(args.output)
            return EXIT_OK
        if args.command == "synthetic":
            cmd_synthetic(args.path, args.years, args.first_year, args.season, args.family, args.seed,
                          args.missing_rate)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "fit":
            cmd_fit(cfg, resume=args.resume)
        elif args.command == "assess":
            cmd_assess(cfg)
        elif args.command == "crossval":
            cmd_crossval(cfg, resume=args.resume)
        elif args.command == "trend":
            cmd_trend(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.n)
        elif args.command == "impute":
            cmd_impute(cfg, args.n)
        if args.plots:
            _render(cfg.output)
    except ConfigError as exc:
        logger.error("config: %s", exc)
        return EXIT_CONFIG
    except InputError as exc:
        logger.error("input: %s", exc)
        return EXIT_INPUT
    except OutputError as exc:
        logger.error("output: %s", exc)
        return EXIT_OUTPUT
    except NUMERICAL_ERRORS as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
