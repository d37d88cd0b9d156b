"""Command-line entry point: ``jointclock <experiment> [options]``.

Exit status: 0 on success, 2 on usage or configuration errors, 3 on numeric
failures, 1 when the output cannot be written.
"""

from __future__ import annotations

import argparse
import sys

from .allan import GridError
from .config import ConfigError, parse_config
from .experiments import REGISTRY, run_experiment
from .noise import CalibrationError
from .spin import ParameterError

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jointclock", description="Run a named clock-stability experiment."
    )
    sub = parser.add_subparsers(dest="experiment", metavar="experiment", required=True)
    for exp in REGISTRY.values():
        sp = sub.add_parser(exp.name, help=exp.help, description=exp.help)
        run = sp.add_argument_group("run settings")
        run.add_argument("--seed", type=int, help="master seed (default 20200101)")
        run.add_argument("--reps", type=int, help="Monte-Carlo realizations (default 20000, 1000 with --fast)")
        run.add_argument("--out", help="output CSV path; the JSON sidecar sits next to it")
        run.add_argument("--config", help="TOML configuration file")
        run.add_argument("--workers", type=int, help="worker processes (-1: all cores)")
        run.add_argument("--fast", action="store_const", const=True, help="reduced preset for smoke runs")
        grp = sp.add_argument_group("parameters")
        for name, p in exp.params.items():
            flags = [_flag(name)]
            if "_" in name:
                flags.append("--" + name)
            kind = "true/false" if p.kind is bool else ("comma-separated list" if p.kind is list else p.kind.__name__)
            grp.add_argument(
                *flags, dest="param_" + name, default=None, metavar=kind.upper().split()[0],
                help=f"{p.help} [{kind}; default {p.default}]",
            )
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    exp = REGISTRY[args.experiment]
    params = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_")}
    flags = {k: getattr(args, k) for k in ("seed", "reps", "out", "workers", "fast")}
    try:
        spec = parse_config(args.config, exp.name, flags, params, exp.declared())
    except ConfigError as exc:
        parser.exit(EXIT_USAGE, f"jointclock: error: {exc}\n")
    try:
        out, _ = run_experiment(spec)
    except (ParameterError, ValueError) as exc:
        print(f"jointclock: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, GridError, CalibrationError) as exc:
        print(f"jointclock: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"jointclock: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
