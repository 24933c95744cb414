"""Command-line front end.

fsieq run <config.json> [--out DIR] [--threads N] [--deterministic]
fsieq validate <config.json>
fsieq props [--out DIR] [--threads N] [--seed N]

Exit codes: 0 success, 2 completed with non-converged or failed cases
(details in the written reports), 1 configuration or tool error.
FSIEQ_THREADS serves as the fallback for --threads.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config, validate_config
from .scenarios import FAILED, run_config


def _default_threads() -> int:
    env = os.environ.get("FSIEQ_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsieq",
        description="Equilibria of a spring-mounted body in a steady stream.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured scenario")
    p_run.add_argument("config", help="path to a JSON run configuration")
    p_run.add_argument("--out", help="override the configured output directory")
    p_run.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: FSIEQ_THREADS or 1)")
    p_run.add_argument("--deterministic", action="store_true",
                       help="drop timing fields so reruns compare bitwise")

    p_val = sub.add_parser("validate", help="check a configuration and exit")
    p_val.add_argument("config", help="path to a JSON run configuration")

    p_props = sub.add_parser("props", help="run the built-in property suite")
    p_props.add_argument("--out", default="fsieq-props", help="output directory")
    p_props.add_argument("--threads", type=int, default=None)
    p_props.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if getattr(args, "threads", None) else _default_threads()

    if args.command == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            for line in exc.violations:
                print(f"invalid: {line}", file=sys.stderr)
            return FAILED
        print(f"ok: {cfg.scenario} configuration is valid")
        return 0

    if args.command == "props":
        cfg, problems = validate_config(
            {
                "scenario": "property_suite",
                "body": {"kind": "sphere", "radius": 0.5},
                "grid": {"R": 4.0, "n": 24},
                "output_dir": args.out,
                "seed": args.seed,
            }
        )
        if problems:
            for line in problems:
                print(f"internal config error: {line}", file=sys.stderr)
            return FAILED
        code = run_config(cfg, threads=threads)
        print(f"property suite finished with exit code {code}; reports in {args.out}")
        return code

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for line in exc.violations:
            print(f"invalid: {line}", file=sys.stderr)
        return FAILED
    try:
        code = run_config(
            cfg,
            threads=threads,
            out_dir=args.out,
            deterministic=True if args.deterministic else None,
        )
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    out = args.out or cfg.output_dir
    print(f"{cfg.scenario} finished with exit code {code}; reports in {out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
