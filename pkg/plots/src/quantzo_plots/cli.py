"""Batch renderer: quantzo-plots --kind {convergence,residual} --in DIR --out FILE."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import SchemaError, plot_convergence, plot_residual_bars


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quantzo-plots",
                                     description="Render benchmark figures from "
                                                 "harness CSVs")
    parser.add_argument("--kind", choices=("convergence", "residual"),
                        default="convergence")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding harness CSVs")
    parser.add_argument("--out", required=True, help="output image path (vector formats work)")
    args = parser.parse_args(argv)
    in_dir = Path(args.in_dir)
    try:
        if args.kind == "convergence":
            traces = sorted(in_dir.glob("trace_*.csv"))
            if not traces:
                print(f"error: no trace_*.csv files in {in_dir}", file=sys.stderr)
                return 2
            plot_convergence(traces, args.out)
        else:
            residual = in_dir / "residual_probes.csv"
            if not residual.exists():
                print(f"error: {residual} not found", file=sys.stderr)
                return 2
            plot_residual_bars(residual, args.out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
