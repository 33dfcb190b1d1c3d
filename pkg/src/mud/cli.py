"""Command-line front end: ``mud <experiment> [flags]``.

Exit codes: 0 on success, 1 on configuration errors, 2 on runtime invariant
violations (non-finite messages, failed integrations, hard statistical
failures).
"""

from __future__ import annotations

import argparse
import sys

from .detectors import InvariantViolation
from .harness import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    load_config_file,
    parse_sigma_grid,
    run_experiment,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mud",
        description="Sparse-signature CDMA multi-user detection and analysis",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat 'key = value' config file; CLI flags override")
        p.add_argument("--alpha", type=float)
        p.add_argument("--sigma-grid", help="'a:b:step' or comma list, in sigma units")
        p.add_argument("--dist", dest="dist_spec", help="regular:L | poisson:LBAR | explicit:l=p,...")
        p.add_argument("--N", dest="n_chips", type=int)
        p.add_argument("--K", dest="n_users", type=int)
        p.add_argument("--t-max", dest="t_max", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--pop-size", dest="pop_size", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--deterministic", action="store_true", default=None)
        p.add_argument("--out", dest="output_path")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(experiment=args.experiment)
    merged: dict = {}
    if args.config:
        merged.update(load_config_file(args.config))
    for key in (
        "alpha", "sigma_grid", "dist_spec", "n_chips", "n_users", "t_max",
        "trials", "pop_size", "seed", "workers", "deterministic", "output_path",
    ):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    for key, val in merged.items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(config, key)
        if key == "sigma_grid" and isinstance(val, str):
            val = parse_sigma_grid(val)
        elif isinstance(current, bool) and isinstance(val, str):
            val = val.lower() in ("1", "true", "yes")
        elif isinstance(current, int) and isinstance(val, str):
            val = int(val)
        elif isinstance(current, float) and isinstance(val, str):
            val = float(val)
        setattr(config, key, val)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        summary = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, RuntimeError) as exc:
        print(f"runtime invariant violation: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
