"""Command-line entry point: one experiment per invocation.

Exit codes: 0 on success, 1 when an experiment flags a violated criterion,
2 on unknown subcommands or malformed configs.
"""

from __future__ import annotations

import argparse
import sys

from .harness import EXPERIMENTS, ConfigError, load_config, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradphi",
        description="Interface-dynamics experiments and diagnostics",
    )
    sub = parser.add_subparsers(dest="experiment")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default="./out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (results are independent of this)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    return parser


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on unknown subcommands/flags already
        return int(exc.code) if exc.code else 0
    if not args.experiment:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        result = run_experiment(args.experiment, cfg, args.out,
                                seed=args.seed, threads=args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in result.criteria.items():
        print(f"{result.name}: {name}: {'pass' if ok else 'FAIL'}")
    return 1 if result.flagged else 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
