"""Command-line runner: ``adptrack {collect,train,validate,compare,rect2d}``.

Exit codes: 0 success, 1 bad configuration or input, 2 policy iteration
or Riccati recursion did not converge, 3 numerical failure (singular
evaluation, non-convex Q-function, non-finite values or the ball leaving
the plate).
"""

import argparse
import dataclasses
import logging
import sys

from . import experiments
from .config import ExperimentConfig, load_config
from .exceptions import (
    AdpTrackError,
    NonConvexInControl,
    NotConverged,
    NumericalFailure,
    PlateEdgeContact,
    SingularEvaluation,
)
from .lspi import accumulated_cost

__all__ = ["main", "build_parser", "accumulated_cost"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("adptrack")


def build_parser():
    parser = argparse.ArgumentParser(prog="adptrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (
        ("collect", "record excitation data and the training reference"),
        ("train", "learn a tracking controller"),
        ("validate", "roll gains out on the configured reference"),
        ("compare", "learned vs model-based gains, setpoint vs trajectory, offset"),
        ("rect2d", "track a rectangle with two axis controllers"),
    ):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=_u64, help="overrides the configured seed")
        p.add_argument("--out", help="output directory (overrides the configured one)")
        p.add_argument("--gain", action="append", default=[], help="gain JSON; repeatable")
    return parser


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _run(verb, cfg, gains):
    out = cfg.out
    if verb == "collect":
        data = experiments.run_collect(cfg, out)
        log.info("recorded %d transitions to %s", len(data), out)
        return EXIT_OK
    if verb == "train":
        est = experiments.run_train(cfg, out)
        log.info("gain %s after %d iterations", est.gain_.as_array().round(3), est.n_iter_)
        return EXIT_OK if est.converged_ else EXIT_NOT_CONVERGED
    if verb == "validate":
        summary = experiments.run_validate(cfg, gains, out)
        for label, cost in summary.items():
            log.info("%s: final accumulated cost %.6g", label, cost)
        return EXIT_OK
    if verb == "compare":
        report, adp = experiments.run_compare(cfg, out)
        log.info("max relative gain difference %.3g", report["max_relative_difference"])
        return EXIT_OK if adp.converged_ else EXIT_NOT_CONVERGED
    if verb == "rect2d":
        experiments.run_rect2d(cfg, gains, out)
        return EXIT_OK
    raise ValueError(verb)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve_config(args)
        return _run(args.verb, cfg, args.gain)
    except NotConverged as exc:
        log.error("%s: %s", args.verb, exc)
        return EXIT_NOT_CONVERGED
    except (NumericalFailure, SingularEvaluation, NonConvexInControl, PlateEdgeContact) as exc:
        log.error("%s: %s", args.verb, exc)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        # ConfigError, DimensionError, InvalidCost and friends are ValueErrors
        log.error("%s: %s", args.verb, exc)
        return EXIT_CONFIG
    except AdpTrackError as exc:
        log.error("%s: %s", args.verb, exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
