"""Command-line front end: run, probe-residual, and grid-span subcommands."""

from __future__ import annotations

import argparse
import sys

from .compander import ConfigError
from .harness import ExperimentConfig, cmd_grid_span, cmd_probe_residual, cmd_run
from .optim import RunFailure


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="path to a YAML experiment config")
    p.add_argument("--out", default=None, help="output directory (default: config's output_dir)")
    p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantzo",
                                     description="Benchmark harness for quantized "
                                                 "zeroth-order optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the convergence benchmark grid")
    _add_common(p_run)
    p_run.add_argument("--workers", type=int, default=1, help="parallel run workers")

    p_probe = sub.add_parser("probe-residual", help="measure endpoint-rounding residuals")
    _add_common(p_probe)

    p_span = sub.add_parser("grid-span", help="report the normalized grid span of a stencil")
    p_span.add_argument("--family", required=True)
    p_span.add_argument("--bits", type=int, required=True)
    p_span.add_argument("--x", type=float, required=True)
    p_span.add_argument("--u", type=float, required=True)
    p_span.add_argument("--mu", type=float, required=True)
    p_span.add_argument("--strength", type=float, default=None)
    p_span.add_argument("--clip-scale", type=float, default=1.0)
    p_span.add_argument("--csv", default=None, help="append the report to this CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "grid-span":
            print(cmd_grid_span(args.family, args.bits, args.x, args.u, args.mu,
                                strength=args.strength, clip_scale=args.clip_scale,
                                csv_path=args.csv))
            return 0
        cfg = ExperimentConfig.from_file(args.config)
        out = args.out if args.out is not None else cfg.output_dir
        if args.command == "run":
            summary = cmd_run(cfg, out, workers=args.workers,
                              seed_offset=args.seed_offset)
            print(f"wrote {len(summary['cells'])} cell(s) to {out}")
        else:
            path = cmd_probe_residual(cfg, out, seed_offset=args.seed_offset)
            print(f"wrote {path}")
        return 0
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
