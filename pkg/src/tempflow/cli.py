"""Command-line entry point: ``tempflow <experiment> [--config F] [--out D] [--seed S] [--paper-scale]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from tempflow.bounds import BoundDomainError
from tempflow.config import ConfigError, load_config
from tempflow.experiments import run_experiment, write_result
from tempflow.gaussian_flows import FlowIntegrationError
from tempflow.models import InvalidModelError
from tempflow.samplers import DegenerateWeightsError, SamplerDivergenceError
from tempflow.schedules import ScheduleIntegrationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

SUBCOMMANDS = {
    "flows": ("flows", "Gaussian moment flows (W, FR, WFR and tempered versions)"),
    "mixture": ("mixture", "iterations to MMD threshold on the mixture target"),
    "smc-compare": ("smc_compare", "SMC-T-WFR vs tempering SMC against the exact KL"),
    "schedules": ("schedules", "adaptive schedules on the mixture target"),
    "bounds": ("bounds", "exact KL against the convergence bounds"),
    "sample": ("sample", "a single sampler run with snapshots"),
}

NUMERICAL_ERRORS = (
    FlowIntegrationError,
    SamplerDivergenceError,
    DegenerateWeightsError,
    ScheduleIntegrationError,
    BoundDomainError,
    InvalidModelError,
    FloatingPointError,
    np.linalg.LinAlgError,
)

log = logging.getLogger("tempflow")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--out", help="output directory (default: config 'out' or runs/<experiment>)")
    common.add_argument("--seed", type=_seed, help="base seed, overrides the config")
    common.add_argument("--paper-scale", action="store_true", help="use the paper's replication counts")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="tempflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in SUBCOMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    experiment = SUBCOMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, experiment=experiment, seed=args.seed, out=args.out, paper_scale=args.paper_scale)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.out or f"runs/{experiment}"
    log.info("running %s (config %s) into %s", experiment, cfg.digest()[:12], out)
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            result = run_experiment(cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = write_result(result, out, cfg)
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
