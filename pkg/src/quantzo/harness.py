"""Experiment harness: configuration, run orchestration, and trace emission.

Configs are human-editable YAML trees. Every output file embeds the config
hash, the seed list, and the library version in leading comment lines, so
re-running a config reproduces files bitwise. Trace CSVs use a fixed,
versioned header; the plotting component consumes only these documented
columns.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .compander import (
    BlockCalibration,
    CompanderSpec,
    ConfigError,
    GridSpec,
    Quantizer,
    quantize_uniform,
    reconstruct,
)
from .diagnostics import (
    LOG10_FLOOR,
    DegenerateProbe,
    ResidualSetup,
    grid_span,
    probe_residual,
)
from .objectives import OBJECTIVES, ObjectiveSpec, StochasticOracle
from .optim import METHODS, MODES, AdamParams, OptimizerConfig, RunTrace, run
from .seeds import STREAM_START, derive_seed, uniform_start

TRACE_SCHEMA = "quantzo-trace-v1"
RESIDUAL_SCHEMA = "quantzo-residual-v1"

TRACE_HEADER = [
    "experiment_id", "method", "objective", "compander", "bits", "seed", "step",
    "loss_quantized", "loss_master", "est_norm", "clip_events",
    "boundary_events", "recalibs",
]

RESIDUAL_HEADER = [
    "experiment_id", "method", "objective", "compander", "bits", "start_seed",
    "probes", "mean_log10_ratio", "two_se_log10_ratio",
]


@dataclass(frozen=True)
class CompanderCell:
    family: str
    bits: int
    strength: float = None  # type: ignore[assignment]  # family default

    @property
    def label(self) -> str:
        return f"{self.family}-{self.bits}bit"

    def build(self, clip_scale: float = 1.0) -> tuple[CompanderSpec, GridSpec]:
        spec = CompanderSpec(family=self.family, strength=self.strength,
                             clip_scale=clip_scale)
        return spec, GridSpec.from_bits(self.bits, spec)


@dataclass(frozen=True)
class ProbeSettings:
    n_probes: int = 32
    seed: int = 0


@dataclass
class ExperimentConfig:
    objectives: list[str]
    companders: list[CompanderCell]
    methods: list[str]
    dimension: int
    K: int = 4
    T: int = 10000
    eta: float = 0.005
    mu: float = 1e-3
    sigma: float = 0.0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    mode: str = "fp_master_adam"
    block_size: int = 64
    clip_norm: float = 1.0
    recalib_period: int = 100
    log_stride: int = 10
    adam: AdamParams = field(default_factory=AdamParams)
    probes: ProbeSettings = field(default_factory=ProbeSettings)
    output_dir: str = "out"

    def __post_init__(self):
        for name in self.objectives:
            if name not in OBJECTIVES:
                raise ConfigError(f"unknown objective {name!r}")
        for method in self.methods:
            if method not in METHODS:
                raise ConfigError(f"unknown method {method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        cells = [CompanderCell(**c) for c in raw.pop("companders")]
        adam = AdamParams(**raw.pop("adam", {}))
        probes = ProbeSettings(**raw.pop("probes", {}))
        try:
            return cls(companders=cells, adam=adam, probes=probes, **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        raw = yaml.safe_load(text)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a key/value tree")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def optimizer_config(self, method: str) -> OptimizerConfig:
        return OptimizerConfig(method=method, mode=self.mode, eta=self.eta,
                               K=self.K, mu=self.mu, T=self.T,
                               clip_norm=self.clip_norm, adam=self.adam,
                               recalib_period=self.recalib_period)


def _fmt(value) -> str:
    # np.float64 is a float subclass whose repr is not a bare literal
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _provenance_lines(schema: str, cfg: ExperimentConfig, seeds: list[int]) -> list[str]:
    return [
        f"# schema={schema}",
        f"# config_hash={cfg.config_hash()} version={__version__} "
        f"seeds={','.join(str(s) for s in seeds)}",
    ]


def _write_csv(path: Path, schema: str, cfg: ExperimentConfig, seeds: list[int],
               header: list[str], rows: list[list]) -> None:
    lines = _provenance_lines(schema, cfg, seeds)
    lines.append(",".join(header))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _run_job(args) -> tuple[str, str, str, int, RunTrace]:
    cfg_dict, objective, cell, method, seed = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    spec, grid = cell.build()
    trace = run(cfg.optimizer_config(method),
                ObjectiveSpec(objective, cfg.dimension), spec, grid, seed,
                sigma=cfg.sigma, block_size=cfg.block_size,
                log_stride=cfg.log_stride)
    return objective, cell.label, method, seed, trace


def cmd_run(cfg: ExperimentConfig, out_dir, workers: int = 1,
            seed_offset: int = 0) -> dict:
    """Run the full (objective x compander x method x seed) grid.

    Writes one trace CSV per (objective, compander) cell plus a summary
    JSON with per-method gap ratios. Returns the summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [s + seed_offset for s in cfg.seeds]
    jobs = [(cfg.to_dict(), objective, cell, method, seed)
            for objective in cfg.objectives
            for cell in cfg.companders
            for method in cfg.methods
            for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]

    experiment_id = cfg.config_hash()
    summary: dict = {"experiment_id": experiment_id, "version": __version__,
                     "seeds": seeds, "cells": {}}
    by_cell: dict[tuple[str, str], list] = {}
    for objective, label, method, seed, trace in results:
        by_cell.setdefault((objective, label), []).append((method, seed, trace))

    for objective in cfg.objectives:
        for cell in cfg.companders:
            key = (objective, cell.label)
            rows = []
            cell_summary: dict = {}
            for method, seed, trace in sorted(by_cell[key], key=lambda r: (r[0], r[1])):
                for rec in trace.records:
                    rows.append([experiment_id, method, objective, cell.label,
                                 cell.bits, seed, rec.step, rec.loss_quantized,
                                 rec.loss_master, rec.est_norm, rec.clip_events,
                                 rec.boundary_events, rec.recalibs])
                cell_summary.setdefault(method, {"gap_ratio": {}, "final_loss": {}})
                cell_summary[method]["gap_ratio"][str(seed)] = trace.gap_ratio
                cell_summary[method]["final_loss"][str(seed)] = trace.final_loss
            for method, entry in cell_summary.items():
                ratios = [v for v in entry["gap_ratio"].values() if not math.isnan(v)]
                entry["gap_ratio_mean"] = sum(ratios) / len(ratios) if ratios else math.nan
            _write_csv(out / f"trace_{objective}_{cell.label}.csv", TRACE_SCHEMA,
                       cfg, seeds, TRACE_HEADER, rows)
            summary["cells"][f"{objective}/{cell.label}"] = cell_summary

    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _probe_state(method: str, x0: np.ndarray, spec: CompanderSpec, grid: GridSpec,
                 calib: BlockCalibration):
    if method in ("ws_rademacher", "ws_gaussian"):
        return x0
    quantizer = Quantizer(spec, grid, calib)
    z_state, _ = quantizer.state(x0)
    if method == "caq":
        return z_state
    return reconstruct(quantize_uniform(z_state.z(), grid), grid)


def cmd_probe_residual(cfg: ExperimentConfig, out_dir, seed_offset: int = 0) -> Path:
    """Measure endpoint-rounding residuals at each start point.

    One CSV row per (method, objective, compander, start): mean of the
    floored per-probe log10 ratios with a 2-standard-error bar. Grid-
    aligned rows sit at the numerical floor.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [s + seed_offset for s in cfg.seeds]
    experiment_id = cfg.config_hash()
    rows = []
    for objective in cfg.objectives:
        for cell in cfg.companders:
            spec, grid = cell.build()
            for method in cfg.methods:
                for seed in seeds:
                    start_seed = seed
                    for attempt in range(16):
                        x0 = uniform_start(cfg.dimension,
                                           derive_seed(start_seed, STREAM_START))
                        calib = BlockCalibration.from_weights(x0, cfg.block_size)
                        oracle = StochasticOracle(ObjectiveSpec(objective, cfg.dimension),
                                                  noise_std=cfg.sigma, sample_seed=seed)
                        setup = ResidualSetup(
                            oracle=oracle, spec=spec, grid=grid, calib=calib,
                            K=cfg.K, mu=cfg.mu,
                            state=_probe_state(method, x0, spec, grid, calib))
                        try:
                            probe = probe_residual(method, setup, cfg.probes.n_probes,
                                                   derive_seed(cfg.probes.seed, seed))
                            break
                        except DegenerateProbe:
                            start_seed = derive_seed(start_seed, 0xDEAD, attempt)
                    else:
                        raise DegenerateProbe(
                            f"no usable probe point for {method}/{objective}")
                    logs = probe.per_probe_log10
                    se = float(logs.std(ddof=1) / np.sqrt(logs.size)) if logs.size > 1 else 0.0
                    rows.append([experiment_id, method, objective, cell.label,
                                 cell.bits, seed, probe.probes,
                                 float(logs.mean()), 2.0 * se])
    rows.sort(key=lambda r: (r[2], r[3], r[1], r[5]))
    path = out / "residual_probes.csv"
    _write_csv(path, RESIDUAL_SCHEMA, cfg, seeds, RESIDUAL_HEADER, rows)
    return path


def cmd_grid_span(family: str, bits: int, x: float, u: float, mu: float,
                  strength: float = None, clip_scale: float = 1.0,
                  csv_path=None) -> str:
    """Print (and optionally append to CSV) one span report."""
    spec = CompanderSpec(family=family, strength=strength, clip_scale=clip_scale)
    grid = GridSpec.from_bits(bits, spec)
    report = grid_span(x, u, mu, spec, grid)
    lo, hi = report.phi_slope_bounds
    text = (f"rho={report.rho:.6g} regime={report.regime} "
            f"phi_slope_bounds=[{lo:.6g}, {hi:.6g}]"
            + (" (stencil clipped)" if report.clipped else ""))
    if csv_path is not None:
        path = Path(csv_path)
        header = "family,bits,x,u,mu,rho,regime,slope_min,slope_max,clipped"
        line = (f"{family},{bits},{_fmt(float(x))},{_fmt(float(u))},{_fmt(float(mu))},"
                f"{_fmt(report.rho)},{report.regime},{_fmt(lo)},{_fmt(hi)},"
                f"{int(report.clipped)}")
        if path.exists():
            path.write_text(path.read_text() + line + "\n")
        else:
            path.write_text(header + "\n" + line + "\n")
    return text
