"""Command-line entry point: ``apdlr <command> [--config FILE] [flags]``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys

from .harness import CONFIG_KEYS, COMMANDS, ConfigError, RunConfig, load_config
from .lowrank import NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _flag_type(parse):
    if parse is bool or getattr(parse, "__name__", "") == "_bool":
        return lambda s: parse(s)
    return parse


def build_parser():
    parser = argparse.ArgumentParser(
        prog="apdlr", description="Low-rank asymptotic-preserving transport solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat 'section.key = value' file")
        for key, (field, parse, flag) in CONFIG_KEYS.items():
            if field == "paper_scale":
                p.add_argument(flag, dest=field, action="store_const", const=True,
                               default=None, help=f"same as {key} = true")
            else:
                p.add_argument(flag, dest=field, type=_flag_type(parse), default=None,
                               metavar=key.split(".")[1].upper(), help=f"overrides {key}")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {f: getattr(args, f) for f, _, _ in CONFIG_KEYS.values()}
    try:
        cfg = load_config(args.config, overrides)
        result = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"error [numerical]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _report(args.command, result)
    return EXIT_OK


def _report(command, result):
    if command in ("converge", "rank-sweep"):
        for row in result.rows:
            print(" ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
        for eps, s in result.slopes.items():
            print(f"slope eps={eps:g}: {s:.3f}")
        return
    rr = result.resolved
    rec = result.record
    print(f"{rr.cfg.problem}: {rec.steps[-1]} steps to t={rec.times[-1]:g}, "
          f"effective rank {rec.final_rank}, mass drift {rec.mass_drift():.2e}")
    if result.trace:
        print(f"l2 diff vs {rr.cfg.compare}: {result.trace[-1][2]:.3e}")
    exact = rr.disc.exact_rho(rr.scheme.t_end)
    if exact is not None:
        from .diagnostics import l2_error_centers
        print(f"l2 error vs exact: {l2_error_centers(result.rho, exact, rr.disc.grid):.3e}")
    print(f"output: {rr.cfg.output_dir}")


if __name__ == "__main__":
    sys.exit(main())
