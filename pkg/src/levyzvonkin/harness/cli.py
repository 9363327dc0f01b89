"""Command line front end.

Exit status: 0 all verdicts pass, 1 a verdict fails, 2 usage or config error,
3 runtime or accuracy error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, LevyZvonkinError
from .config import EXPERIMENTS, load_config
from .runner import run_experiments

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="levyzvonkin",
                                description="Stable-noise SDE experiments with singular drift.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run experiments from a config file")
    r.add_argument("--config", required=True, help="INI config file")
    r.add_argument("--experiment", choices=("all",) + EXPERIMENTS,
                   help="override run.experiment")
    r.add_argument("--threads", type=int, help="cap on FFT worker threads")
    r.add_argument("--outdir", help="override run.outdir")
    v = sub.add_parser("validate", help="check a config file and exit")
    v.add_argument("--config", required=True, help="INI config file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"config OK: {', '.join(cfg.experiments)}")
            return EXIT_PASS
        if args.experiment:
            cfg = cfg.with_experiment(args.experiment)
        if args.threads is not None and args.threads < 0:
            raise ConfigError("--threads must be nonnegative", key="threads")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        outcomes = run_experiments(cfg, args.outdir, args.threads)
    except (LevyZvonkinError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    ok = True
    for o in outcomes:
        for c in o.checks:
            print(f"{o.experiment:12s} {'PASS' if c.passed else 'FAIL'}  {c.name} = {c.value:.6g}"
                  f"  ({c.threshold})")
        print(f"{o.experiment:12s} -> {o.directory}")
        ok &= o.passed
    return EXIT_PASS if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
