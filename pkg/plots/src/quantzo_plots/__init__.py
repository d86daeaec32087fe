"""Batch figure rendering for quantzo benchmark CSVs."""

__version__ = "0.1.0"

from .figures import (
    FigureSpec,
    SchemaError,
    plot_convergence,
    plot_residual_bars,
    read_residual_csv,
    read_trace_csv,
)

__all__ = [
    "FigureSpec",
    "SchemaError",
    "plot_convergence",
    "plot_residual_bars",
    "read_residual_csv",
    "read_trace_csv",
]
