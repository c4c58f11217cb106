"""Command-line front end: ``weakmeas <experiment> [options]``.

Exit status: 0 success, 1 I/O failure, 2 invalid configuration,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from weakmeas.experiments import (
    ConfigError,
    Experiment,
    NumericalAbort,
    load_config_file,
    resolve_config,
    run_experiment,
)
from weakmeas.povm import EstimateMode
from weakmeas.qubit import StateError
from weakmeas.sde import SchemeError
from weakmeas.summary import default_workers

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# flag name -> config field
_OVERRIDES = {
    "seed": "seed",
    "out": "out_path",
    "trajectories": "trajectories",
    "delta": "delta",
    "dt": "dt",
    "n_steps": "n_steps",
    "t_end": "t_end",
    "samples": "samples",
    "estimate_mode": "estimate_mode",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags already; keep that but name the problem clearly
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="weakmeas", description="Weak-measurement qubit estimation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for exp in Experiment:
        p = sub.add_parser(exp.value, help=f"run the {exp.value} experiment")
        p.add_argument("--config", help="JSON file with experiment fields; flags override it")
        p.add_argument("--seed", type=int, help="master seed (default: $WEAKMEAS_SEED, else 0)")
        p.add_argument("--out", help="output CSV path; a .json sidecar is written next to it")
        p.add_argument("--trajectories", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--n-steps", dest="n_steps", type=int)
        p.add_argument("--t-end", dest="t_end", type=float)
        p.add_argument("--samples", type=int)
        p.add_argument("--estimate-mode", dest="estimate_mode", choices=[m.value for m in EstimateMode])
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count); results do not depend on it")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = load_config_file(args.config) if args.config else {}
        file_exp = file_values.get("experiment")
        if file_exp is not None and file_exp != args.experiment:
            raise ConfigError(f"field 'experiment': config file says {file_exp!r}, command is {args.experiment!r}")
        overrides = {field: getattr(args, flag) for flag, field in _OVERRIDES.items()}
        overrides["experiment"] = args.experiment
        cfg = resolve_config(file_values, overrides)
        workers = default_workers() if args.workers is None else args.workers
        if workers < 1:
            raise ConfigError("field 'workers': must be at least 1")
        result = run_experiment(cfg, workers)
    except ConfigError as exc:
        print(f"weakmeas: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, SchemeError, StateError, FloatingPointError) as exc:
        print(f"weakmeas: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"weakmeas: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if result.summary:
        print(json.dumps(result.summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
