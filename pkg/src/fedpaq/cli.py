"""Command line: ``fedpaq {run,sweep,theory,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import ConfigError, parse_config


def _load(args):
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.with_(seed=args.seed)
    return config


def _out(args) -> Path:
    return Path(args.out) if args.out else harness.default_out_dir()


def cmd_run(args) -> int:
    config = _load(args)
    res = harness.execute(config, _out(args))
    if not args.quiet:
        final = res.summary["final"]
        print(f"wrote {res.metrics_path} and {res.summary_path}")
        if final:
            print(f"final loss {final['train_loss']:.6g} at simulated time {final['sim_time_s']:.6g} s")
    return 0


def cmd_sweep(args) -> int:
    config = _load(args)
    index = harness.sweep(config, _out(args))
    if not args.quiet:
        print(f"wrote {index}")
    return 0


def cmd_theory(args) -> int:
    from .data import build_problem

    config = _load(args)
    consts = harness.theory_for(config, build_problem(config.problem, config.nodes))
    print(json.dumps(consts.to_dict() if consts else None, indent=2))
    return 0


def cmd_check(args) -> int:
    from .checks import run_checks

    return 0 if run_checks(seed=args.seed or 0, out=(lambda s: None) if args.quiet else print) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpaq", description="Federated periodic-averaging quantized SGD simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (
        ("run", cmd_run, True),
        ("sweep", cmd_sweep, True),
        ("theory", cmd_theory, True),
        ("check", cmd_check, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="INI run configuration")
        p.add_argument("--out", help=f"output directory (default ${harness.OUT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
