"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .. import diffcore as dc
from ..matcher import DegenerateBatchError, NumericalError
from ..priors import SpecError
from ..pve import DegenerateTargetError
from ..stein import SolverError
from ..vi import DivergenceError
from . import experiment as ex
from .config import REFERENCE_GRIDS, Config, ConfigError, load_config, update
from .data import DataError, save_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("simulate-pve", "match-pve", "fit", "feature-select", "extend-dataset", "cv", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infoprior",
        description="Informative GSM priors: PVE simulation and matching, fitting, feature selection.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config's seed)")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    parser.add_argument("--paper-grids", action="store_true",
                        help="use sigma_lambda in e^-2..e^2 and p in 0.1..0.9 for cv")
    parser.add_argument("--results", help="results.csv to summarize (report only)")
    parser.add_argument("--no-plots", action="store_true", help="skip SVG output")
    return parser


def _load(args) -> tuple[Config, int, str]:
    cfg = load_config(args.config) if args.config else Config()
    if args.paper_grids:
        cfg = update(cfg, REFERENCE_GRIDS)
    seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
    out = args.out or cfg.get_str("out_dir", "out")
    return cfg, seed, out


def dispatch(args) -> int:
    cfg, seed, out = _load(args)
    plots = not args.no_plots and cfg.get_bool("plot.enabled", True)
    cmd = args.command
    if cmd in ("fit", "feature-select"):
        ex.run_experiment(ex.ExperimentConfig(cmd, cfg, seed, out, args.threads, plots))
    elif cmd == "simulate-pve":
        ex.run_simulate(cfg, seed, out, plots)
    elif cmd == "match-pve":
        ex.run_match(cfg, seed, out, plots)
    elif cmd == "cv":
        ex.run_cv(cfg, seed, out, args.threads, plots)
    elif cmd == "extend-dataset":
        os.makedirs(out, exist_ok=True)
        if not cfg.get_bool("dataset.extend", False):
            cfg = update(cfg, {"dataset.extend": "true"})
        ds = ex.build_dataset(cfg, seed)
        save_csv(ds, os.path.join(out, "extended.csv"), cfg.get_str("dataset.target", "y"))
    elif cmd == "report":
        results = args.results or os.path.join(out, "results.csv")
        ex.run_report(results, out, plots)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            return dispatch(args)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NumericalError, SolverError, DegenerateBatchError,
            dc.DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DegenerateTargetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
