"""Optimization loops over the quantized forward oracle.

Two modes are implemented:

* ``strict_alg1``: grid-stored SGD for the grid-aligned method only. The
  iterate is an integer-indexed ZState; each step estimates the
  z-coordinate gradient from one-grid-step stencils and projects
  z - eta*g back to the nearest grid point. The per-step projection
  displacement satisfies ||q||^2 <= d*delta^2/4 whenever the
  pre-projection point stays inside the grid range.

* ``fp_master_adam``: the shared experimental stack. Every method keeps a
  continuous master state in its own query coordinate (weights for the
  weight-space baselines, z for the grid-aligned and off-grid methods),
  clips the estimate in Euclidean norm, applies Adam with bias
  correction, and recalibrates block scales every R steps. Grid-aligned
  queries are formed at the grid projection of the master so the on-grid
  endpoint identity holds at every query.

The logged loss column is F at the current quantized model state (the
deployable iterate); the master-state loss is logged as an auxiliary
column. Traces are bitwise reproducible for fixed seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .compander import (
    BlockCalibration,
    CompanderSpec,
    GridSpec,
    Quantizer,
    ZState,
    calibrate_scales,
    phi,
    phi_inv,
    quantize_uniform,
    range_clip_count,
    reconstruct,
)
from .estimators import (
    GAUSSIAN,
    RADEMACHER,
    NonFiniteLoss,
    estimate_caq,
    estimate_offgrid_z,
    estimate_weight_space,
    sample_directions,
)
from .objectives import ObjectiveSpec, StochasticOracle, evaluate
from .seeds import STREAM_DIRECTIONS, STREAM_NOISE, STREAM_START, derive_seed, uniform_start

METHODS = ("caq", "ws_rademacher", "ws_gaussian", "offgrid_z")
MODES = ("strict_alg1", "fp_master_adam")

Z_METHODS = ("caq", "offgrid_z")


class RunFailure(RuntimeError):
    """A step produced a non-finite loss or estimate; carries repro info."""

    def __init__(self, message: str, step: int, seed: int):
        super().__init__(f"{message} (step={step}, seed={seed})")
        self.step = step
        self.seed = seed


@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    method: str
    mode: str = "fp_master_adam"
    eta: float = 0.005
    K: int = 4
    mu: float = 1e-3
    T: int = 1000
    clip_norm: float = 1.0
    adam: AdamParams = field(default_factory=AdamParams)
    recalib_period: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "strict_alg1" and self.method != "caq":
            raise ValueError("strict_alg1 mode is valid only for method='caq'")
        if self.eta < 0 or self.K < 1 or self.T < 0:
            raise ValueError("invalid eta/K/T")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    @property
    def direction_kind(self) -> str:
        return GAUSSIAN if self.method == "ws_gaussian" else RADEMACHER


@dataclass
class StepRecord:
    step: int
    loss_quantized: float
    loss_master: float
    est_norm: float
    clip_events: int
    boundary_events: int
    recalibs: int


@dataclass
class RunTrace:
    """Per-step records plus the run summary.

    Counter columns are cumulative totals up to and including the recorded
    step. gap_ratio divides final by start quantized-state loss, using the
    known minimum value 0 of all four objectives.
    """

    method: str
    seed: int
    records: list[StepRecord]
    start_loss: float
    final_loss: float
    gap_ratio: float
    clip_events: int = 0
    boundary_events: int = 0
    recalibs: int = 0
    projection_sq: list[float] | None = None


@dataclass
class StepInfo:
    estimate: np.ndarray
    est_norm: float
    clip_events: int
    boundary_events: int
    projection_sq: float = 0.0


@dataclass
class StrictState:
    z_state: ZState


@dataclass
class FPMasterState:
    """Continuous master iterate in the method's query coordinate."""

    values: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int
    calib: BlockCalibration
    coordinate: str  # "weight" or "z"


def _gap_ratio(start_loss: float, final_loss: float) -> float:
    if start_loss <= 0.0:
        return math.nan
    return final_loss / start_loss


def step_strict_alg1(z_state: ZState, config: OptimizerConfig, oracle: StochasticOracle,
                     spec: CompanderSpec, step_index: int, dir_seed: int,
                     xi: int) -> tuple[ZState, StepInfo]:
    """One grid-stored SGD step: estimate, z - eta*g, round back to the grid."""
    grid = z_state.grid
    dirs = sample_directions(RADEMACHER, config.K, z_state.d, dir_seed)
    est = estimate_caq(oracle, spec, grid, z_state, dirs, xi)
    g = est.estimate
    if not np.all(np.isfinite(g)):
        raise NonFiniteLoss("non-finite estimate")
    z_pre = z_state.z() - config.eta * g
    clips = range_clip_count(z_pre, grid)
    new_idx = quantize_uniform(z_pre, grid)
    q = reconstruct(new_idx, grid) - z_pre
    info = StepInfo(estimate=g, est_norm=float(np.linalg.norm(g)),
                    clip_events=clips, boundary_events=est.boundary_events,
                    projection_sq=float(q @ q))
    return replace(z_state, indices=new_idx), info


def step_fp_master(state: FPMasterState, config: OptimizerConfig, oracle: StochasticOracle,
                   spec: CompanderSpec, grid: GridSpec, step_index: int, dir_seed: int,
                   xi: int) -> tuple[FPMasterState, StepInfo]:
    """One shared-stack step: query, clipped estimate, Adam on the master."""
    d = state.values.shape[0]
    dirs = sample_directions(config.direction_kind, config.K, d, dir_seed)
    clips = 0
    boundary = 0
    if config.method in ("ws_rademacher", "ws_gaussian"):
        quantizer = Quantizer(spec, grid, state.calib)
        est = estimate_weight_space(oracle, quantizer, state.values, config.mu, dirs, xi)
    else:
        idx = quantize_uniform(state.values, grid)
        clips += range_clip_count(state.values, grid)
        if config.method == "caq":
            z_query = ZState(indices=idx, grid=grid, block_scales=state.calib.scales,
                             block_size=state.calib.block_size)
            est = estimate_caq(oracle, spec, grid, z_query, dirs, xi)
        else:  # offgrid_z queries off-grid radii from the same projected center
            z_center = reconstruct(idx, grid)
            est = estimate_offgrid_z(oracle, spec, grid, z_center, config.mu, dirs, xi,
                                     calib=state.calib)
    g = est.estimate
    if not np.all(np.isfinite(g)):
        raise NonFiniteLoss("non-finite estimate")
    clips += est.clip_events
    boundary += est.boundary_events
    gnorm = float(np.linalg.norm(g))
    if gnorm > config.clip_norm:
        g = g * (config.clip_norm / gnorm)
    t = state.t + 1
    b1, b2, eps = config.adam.beta1, config.adam.beta2, config.adam.eps
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    values = state.values - config.eta * m_hat / (np.sqrt(v_hat) + eps)
    if state.coordinate == "z":
        # phi_inv is only defined on the grid range, so the z master is
        # kept inside it; each clamped coordinate counts as a clip event.
        clamped = np.clip(values, grid.z_min, grid.z_max)
        clips += int(np.count_nonzero(clamped != values))
        values = clamped
    info = StepInfo(estimate=est.estimate, est_norm=float(np.linalg.norm(est.estimate)),
                    clip_events=clips, boundary_events=boundary)
    return FPMasterState(values=values, m=m, v=v, t=t, calib=state.calib,
                         coordinate=state.coordinate), info


def _master_weights(state: FPMasterState, spec: CompanderSpec) -> np.ndarray:
    if state.coordinate == "weight":
        return state.values
    d = state.values.shape[0]
    return phi_inv(state.values, spec, state.calib.per_coordinate(d))


def _recalibrate_master(state: FPMasterState, spec: CompanderSpec) -> FPMasterState:
    x = _master_weights(state, spec)
    calib = replace(state.calib, scales=calibrate_scales(x, state.calib))
    if state.coordinate == "z":
        values = phi(x, spec, calib.per_coordinate(x.shape[0]))
    else:
        values = state.values
    return replace(state, values=values, calib=calib)


def _recalibrate_strict(z_state: ZState, spec: CompanderSpec) -> ZState:
    # Reconstruct weights, refresh scales, re-index through the quantizer.
    # The re-projection is an extra rounding event outside the analyzed
    # update, which is why recalibrations are counted in the trace.
    x = z_state.to_weights(spec)
    calib = BlockCalibration(block_size=z_state.block_size,
                             scales=calibrate_scales(x, BlockCalibration(
                                 block_size=z_state.block_size,
                                 scales=z_state.block_scales)))
    z = phi(x, spec, calib.per_coordinate(x.shape[0]))
    idx = quantize_uniform(z, z_state.grid)
    return replace(z_state, indices=idx, block_scales=calib.scales)


def _quantized_loss(objective: ObjectiveSpec, spec: CompanderSpec, grid: GridSpec,
                    state, strict: bool) -> tuple[float, float]:
    """(loss at the quantized model state, loss at the master state)."""
    if strict:
        x = state.z_state.to_weights(spec)
        loss = evaluate(objective, x)
        return loss, loss
    if state.coordinate == "weight":
        quantizer = Quantizer(spec, grid, state.calib)
        xq, _ = quantizer.apply(state.values)
        return evaluate(objective, xq), evaluate(objective, state.values)
    d = state.values.shape[0]
    scales = state.calib.per_coordinate(d)
    idx = quantize_uniform(state.values, grid)
    xq = phi_inv(reconstruct(idx, grid), spec, scales)
    x_master = phi_inv(state.values, spec, scales)
    return evaluate(objective, xq), evaluate(objective, x_master)


def run(config: OptimizerConfig, objective: ObjectiveSpec, spec: CompanderSpec,
        grid: GridSpec, seed: int, *, sigma: float = 0.0, block_size: int = 64,
        log_stride: int = 1) -> RunTrace:
    """Execute T steps from the seeded start and return the trace.

    Start vectors and per-step direction seeds depend only on (seed, step),
    never on the method, so the configured methods are start-matched and
    consume identical direction streams where dimensionally compatible.
    """
    if log_stride < 1:
        raise ValueError("log_stride must be >= 1")
    d = objective.dimension
    x0 = uniform_start(d, derive_seed(seed, STREAM_START))
    calib = BlockCalibration.from_weights(x0, block_size, config.recalib_period)
    oracle = StochasticOracle(objective, noise_std=sigma,
                              sample_seed=derive_seed(seed, STREAM_NOISE))
    strict = config.mode == "strict_alg1"
    if strict:
        quantizer = Quantizer(spec, grid, calib)
        z_state, _ = quantizer.state(x0)
        state: object = StrictState(z_state=z_state)
    else:
        if config.method in Z_METHODS:
            values = phi(x0, spec, calib.per_coordinate(d))
        else:
            values = x0.copy()
        state = FPMasterState(values=values, m=np.zeros(d), v=np.zeros(d), t=0,
                              calib=calib, coordinate="z" if config.method in Z_METHODS
                              else "weight")

    records: list[StepRecord] = []
    projection_sq: list[float] = [] if strict else None
    clip_total = 0
    boundary_total = 0
    recalib_total = 0

    def record(step: int, est_norm: float):
        lq, lm = _quantized_loss(objective, spec, grid, state, strict)
        records.append(StepRecord(step=step, loss_quantized=lq, loss_master=lm,
                                  est_norm=est_norm, clip_events=clip_total,
                                  boundary_events=boundary_total,
                                  recalibs=recalib_total))

    record(0, 0.0)
    start_loss = records[0].loss_quantized

    for t in range(1, config.T + 1):
        dir_seed = derive_seed(seed, STREAM_DIRECTIONS, t)
        try:
            if strict:
                z_next, info = step_strict_alg1(state.z_state, config, oracle, spec,
                                                t, dir_seed, xi=t)
                state.z_state = z_next
                projection_sq.append(info.projection_sq)
            else:
                state, info = step_fp_master(state, config, oracle, spec, grid, t,
                                             dir_seed, xi=t)
        except NonFiniteLoss as exc:
            raise RunFailure(str(exc), step=t, seed=seed) from exc
        clip_total += info.clip_events
        boundary_total += info.boundary_events
        period = config.recalib_period
        if period > 0 and t % period == 0 and t < config.T:
            if strict:
                state.z_state = _recalibrate_strict(state.z_state, spec)
            else:
                state = _recalibrate_master(state, spec)
            recalib_total += 1
        if t % log_stride == 0 or t == config.T:
            record(t, info.est_norm)

    final_loss = records[-1].loss_quantized
    return RunTrace(method=config.method, seed=seed, records=records,
                    start_loss=start_loss, final_loss=final_loss,
                    gap_ratio=_gap_ratio(start_loss, final_loss),
                    clip_events=clip_total, boundary_events=boundary_total,
                    recalibs=recalib_total, projection_sq=projection_sq)
