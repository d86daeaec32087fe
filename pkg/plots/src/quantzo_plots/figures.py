"""Render the convergence grid and the residual bar figure from trace CSVs.

This package consumes only the documented CSV schemas written by the
benchmark harness (comment lines starting with '#', then a fixed header).
It never recomputes statistics beyond seed means and standard errors; all
science numbers come from the CSVs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

#: Documented harness schemas, duplicated on the consumer side on purpose:
#: a header drift in either component must fail loudly here.
TRACE_HEADER = [
    "experiment_id", "method", "objective", "compander", "bits", "seed", "step",
    "loss_quantized", "loss_master", "est_norm", "clip_events",
    "boundary_events", "recalibs",
]

RESIDUAL_HEADER = [
    "experiment_id", "method", "objective", "compander", "bits", "start_seed",
    "probes", "mean_log10_ratio", "two_se_log10_ratio",
]

#: Column ordering used by the benchmark grid; unknown names sort after.
OBJECTIVE_ORDER = ["quadratic", "levy", "rosenbrock", "ackley"]

RESIDUAL_FLOOR = -12.0


class SchemaError(ValueError):
    """The CSV header does not match the documented schema."""


@dataclass
class FigureSpec:
    inputs: list[Path]
    output: Path
    log_scale: bool = True
    layout: tuple[int, int] | None = None  # (rows, cols); derived when None


def _read_csv(path, expected_header: list[str]) -> pd.DataFrame:
    path = Path(path)
    header = None
    for line in path.read_text().splitlines():
        if not line.startswith("#"):
            header = line.split(",")
            break
    if header is None:
        raise SchemaError(f"{path}: no header line found")
    if header != expected_header:
        raise SchemaError(f"{path}: header {header} does not match the "
                          f"documented schema {expected_header}")
    return pd.read_csv(path, comment="#")


def read_trace_csv(path) -> pd.DataFrame:
    return _read_csv(path, TRACE_HEADER)


def read_residual_csv(path) -> pd.DataFrame:
    return _read_csv(path, RESIDUAL_HEADER)


def _objective_sort_key(name: str):
    try:
        return (0, OBJECTIVE_ORDER.index(name))
    except ValueError:
        return (1, name)


def _panel_grid(frame: pd.DataFrame) -> tuple[list[str], list[str]]:
    companders = sorted(frame["compander"].unique(),
                        key=lambda c: (int(frame.loc[frame["compander"] == c, "bits"].iloc[0]), c))
    objectives = sorted(frame["objective"].unique(), key=_objective_sort_key)
    return list(companders), list(objectives)


def _mean_curve(panel: pd.DataFrame, method: str) -> tuple[np.ndarray, np.ndarray]:
    """Seed-mean loss curve, resampled to the union of logged steps."""
    rows = panel[panel["method"] == method]
    steps = np.unique(rows["step"].to_numpy())
    curves = []
    for _, per_seed in rows.groupby("seed"):
        per_seed = per_seed.sort_values("step")
        curves.append(np.interp(steps, per_seed["step"], per_seed["loss_quantized"]))
    return steps, np.mean(curves, axis=0)


def plot_convergence(trace_paths, out_path, log_scale: bool = True):
    """One panel per (compander, objective): rows are companders, columns
    are objectives, one seed-mean curve per method."""
    frames = [read_trace_csv(p) for p in trace_paths]
    if not frames:
        raise ValueError("no trace CSVs given")
    frame = pd.concat(frames, ignore_index=True)
    companders, objectives = _panel_grid(frame)
    n_rows, n_cols = len(companders), len(objectives)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(3.2 * n_cols, 2.6 * n_rows),
                             squeeze=False)
    methods = sorted(frame["method"].unique())
    for i, compander in enumerate(companders):
        for j, objective in enumerate(objectives):
            ax = axes[i][j]
            panel = frame[(frame["compander"] == compander)
                          & (frame["objective"] == objective)]
            if panel.empty:
                warnings.warn(f"no data for panel ({compander}, {objective}); "
                              "rendered empty")
                ax.set_axis_off()
                continue
            for method in methods:
                if not (panel["method"] == method).any():
                    continue
                steps, curve = _mean_curve(panel, method)
                ax.plot(steps, curve, label=method)
            if log_scale:
                ax.set_yscale("log")
            if i == 0:
                ax.set_title(objective)
            if j == 0:
                ax.set_ylabel(compander)
            if i == n_rows - 1:
                ax.set_xlabel("step")
    handles, labels = axes[0][0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center", ncol=len(labels),
                   frameon=False)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    return fig


def plot_residual_bars(residual_path, out_path):
    """Grouped residual bars with +/- 2 SE whiskers, one panel per
    (compander, objective); floor-level bars stay at exactly -12."""
    frame = read_residual_csv(residual_path)
    companders, objectives = _panel_grid(frame)
    n_rows, n_cols = len(companders), len(objectives)
    fig, axes = plt.subplots(n_rows, n_cols,
                             figsize=(3.2 * n_cols, 2.6 * n_rows),
                             squeeze=False)
    methods = sorted(frame["method"].unique())
    width = 0.8 / max(len(methods), 1)
    for i, compander in enumerate(companders):
        for j, objective in enumerate(objectives):
            ax = axes[i][j]
            panel = frame[(frame["compander"] == compander)
                          & (frame["objective"] == objective)]
            if panel.empty:
                warnings.warn(f"no data for panel ({compander}, {objective}); "
                              "rendered empty")
                ax.set_axis_off()
                continue
            for m_idx, method in enumerate(methods):
                rows = panel[panel["method"] == method]
                if rows.empty:
                    continue
                xs = np.arange(len(rows)) + m_idx * width
                ax.bar(xs, rows["mean_log10_ratio"], width=width, label=method,
                       yerr=rows["two_se_log10_ratio"], capsize=2)
            ax.axhline(RESIDUAL_FLOOR, linewidth=0.6, linestyle=":")
            ax.set_xticks([])
            if i == 0:
                ax.set_title(objective)
            if j == 0:
                ax.set_ylabel(compander)
    handles, labels = axes[0][0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="lower center", ncol=len(labels),
                   frameon=False)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    return fig
