"""Command-line entry point.

    optimize --config <path> [--mode simulate|run] [--out <dir>] [--seed <u64>]

Exit codes: 0 success, 1 configuration error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DivergenceError
from .experiments import load_config, run_experiment, validate_config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="optimize",
        description="Run simulated or shared-memory asynchronous optimization experiments.",
    )
    parser.add_argument("--config", required=True, help="path to a JSON experiment config")
    parser.add_argument("--mode", choices=["simulate", "run"], help="override the config's mode")
    parser.add_argument("--out", help="output directory for traces and the summary")
    parser.add_argument("--seed", type=int, help="override the base seed")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        doc = dict(cfg.doc)
        if args.mode:
            doc["mode"] = args.mode
        if args.seed is not None:
            doc["base_seed"] = args.seed
        cfg = validate_config(doc)
        summary = run_experiment(cfg, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 2
    algos = ", ".join(summary["algorithms"])
    print(f"done: mode={summary['mode']} algorithms=[{algos}]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
