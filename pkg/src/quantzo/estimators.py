"""Direction sampling and the three two-point query geometries.

* weight-space: endpoints x +/- mu*u, rounded through the full quantizer
  before evaluation (the low-precision engine rounds whatever it is given);
* off-grid z-coordinate: endpoints z +/- mu*u rounded by the uniform
  quantizer U before expansion, exposing the reappearing rounding channel;
* grid-aligned (caq): endpoints one grid step from an integer-indexed
  state, built by index arithmetic so no rounding call is needed.

All 2K endpoint losses within one call share the same stochastic sample xi
(common random numbers), are evaluated in a fixed order (k ascending, +
before -), and are reduced with numpy's deterministic pairwise summation,
so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compander import (
    CompanderSpec,
    GridSpec,
    Quantizer,
    ZState,
    phi_inv,
    quantize_uniform,
    range_clip_count,
    reconstruct,
)
from .seeds import philox

RADEMACHER = "rademacher"
GAUSSIAN = "gaussian"


class NonFiniteLoss(RuntimeError):
    """An endpoint evaluation returned a non-finite loss."""


@dataclass(frozen=True)
class DirectionBatch:
    """K x d sampled directions with seed provenance."""

    kind: str
    K: int
    d: int
    seed: int
    values: np.ndarray


def sample_directions(kind: str, K: int, d: int, seed: int) -> DirectionBatch:
    """Draw K i.i.d. direction rows from a counter-based stream keyed by seed.

    Rademacher entries are exactly +/-1, so every row has squared norm d.
    """
    if kind not in (RADEMACHER, GAUSSIAN):
        raise ValueError(f"unknown direction kind {kind!r}")
    if K < 1 or d < 1:
        raise ValueError("K and d must be >= 1")
    rng = philox(seed)
    if kind == RADEMACHER:
        values = rng.integers(0, 2, size=(K, d)).astype(float) * 2.0 - 1.0
    else:
        values = rng.standard_normal((K, d))
    return DirectionBatch(kind=kind, K=K, d=d, seed=seed, values=values)


@dataclass
class EstimateResult:
    """Two-point estimate plus the endpoint losses it was built from.

    The estimate reconstructs exactly as
    mean_k((losses[k,0]-losses[k,1]) / (2*radius) * directions[k]).
    """

    estimate: np.ndarray
    endpoint_losses: np.ndarray  # shape (K, 2): [:, 0] is +, [:, 1] is -
    radius: float
    directions: DirectionBatch
    rounded_endpoints_used: bool
    clip_events: int = 0
    boundary_events: int = 0


def _evaluate_pairs(oracle, plus_points: np.ndarray, minus_points: np.ndarray, xi) -> np.ndarray:
    K = plus_points.shape[0]
    losses = np.empty((K, 2))
    for k in range(K):
        losses[k, 0] = oracle.loss(plus_points[k], xi)
        losses[k, 1] = oracle.loss(minus_points[k], xi)
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss("non-finite endpoint loss")
    return losses


def _combine(losses: np.ndarray, radius: float, dirs: DirectionBatch) -> np.ndarray:
    quotients = (losses[:, 0] - losses[:, 1]) / (2.0 * radius)
    return (quotients[:, None] * dirs.values).mean(axis=0)


def estimate_weight_space(oracle, quantizer: Quantizer, x, mu: float,
                          dirs: DirectionBatch, xi) -> EstimateResult:
    """Weight-space stencil: losses at Q(x +/- mu*u_k), quotient over 2*mu."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    x = np.asarray(x, dtype=float)
    plus_raw = x[None, :] + mu * dirs.values
    minus_raw = x[None, :] - mu * dirs.values
    plus, clips_p = quantizer.apply(plus_raw)
    minus, clips_m = quantizer.apply(minus_raw)
    losses = _evaluate_pairs(oracle, plus, minus, xi)
    return EstimateResult(
        estimate=_combine(losses, mu, dirs),
        endpoint_losses=losses,
        radius=mu,
        directions=dirs,
        rounded_endpoints_used=True,
        clip_events=clips_p + clips_m,
    )


def estimate_offgrid_z(oracle, spec: CompanderSpec, grid: GridSpec, z, mu: float,
                       dirs: DirectionBatch, xi, calib=None) -> EstimateResult:
    """Off-grid z stencil: losses at phi_inv(U(z +/- mu*u_k)), quotient over 2*mu."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    z = np.asarray(z, dtype=float)
    scales = spec.clip_scale if calib is None else calib.per_coordinate(z.shape[0])
    plus_raw = z[None, :] + mu * dirs.values
    minus_raw = z[None, :] - mu * dirs.values
    clips = range_clip_count(plus_raw, grid) + range_clip_count(minus_raw, grid)
    plus = phi_inv(reconstruct(quantize_uniform(plus_raw, grid), grid), spec, scales)
    minus = phi_inv(reconstruct(quantize_uniform(minus_raw, grid), grid), spec, scales)
    losses = _evaluate_pairs(oracle, plus, minus, xi)
    return EstimateResult(
        estimate=_combine(losses, mu, dirs),
        endpoint_losses=losses,
        radius=mu,
        directions=dirs,
        rounded_endpoints_used=True,
        clip_events=clips,
    )


def _mirror_indices(raw: np.ndarray, levels: int) -> tuple[np.ndarray, int]:
    # One-grid-step overshoot reflects back inside: -1 -> 1, n -> n-2. A
    # two-sided stencil at an edge index cannot keep both endpoints in
    # range for any sign choice, so the out-of-range side is mirrored and
    # that coordinate contributes no loss difference there.
    reflected = np.abs(raw)
    reflected = np.where(reflected > levels - 1, 2 * (levels - 1) - reflected, reflected)
    return reflected, int(np.count_nonzero(reflected != raw))


def caq_endpoint_indices(z_state: ZState, dirs: DirectionBatch) -> tuple[np.ndarray, np.ndarray, int]:
    """Integer endpoint indices for the one-grid-step stencil, with boundary
    reflections counted. Shared by the measured estimator and the unrounded
    reference so both evaluate the identical stencil."""
    if dirs.kind != RADEMACHER:
        raise ValueError("grid-aligned stencils require rademacher directions")
    r = dirs.values.astype(np.int64)
    idx = z_state.indices[None, :]
    plus, refl_p = _mirror_indices(idx + r, z_state.grid.levels)
    minus, refl_m = _mirror_indices(idx - r, z_state.grid.levels)
    return plus, minus, refl_p + refl_m


def estimate_caq(oracle, spec: CompanderSpec, grid: GridSpec, z_state: ZState,
                 dirs: DirectionBatch, xi) -> EstimateResult:
    """Grid-aligned stencil: endpoints are index +/- 1 per coordinate, so
    they are grid points by construction and no rounding call happens.

    Endpoint z values must come from ``reconstruct`` on the integer
    indices: forming them as z +/- delta float sums is not grid-exact.
    """
    if grid is not z_state.grid and grid != z_state.grid:
        raise ValueError("grid does not match the state's grid")
    plus_idx, minus_idx, reflections = caq_endpoint_indices(z_state, dirs)
    scales = z_state.coordinate_scales()
    plus = phi_inv(reconstruct(plus_idx, grid), spec, scales)
    minus = phi_inv(reconstruct(minus_idx, grid), spec, scales)
    losses = _evaluate_pairs(oracle, plus, minus, xi)
    return EstimateResult(
        estimate=_combine(losses, grid.delta, dirs),
        endpoint_losses=losses,
        radius=grid.delta,
        directions=dirs,
        rounded_endpoints_used=False,
        boundary_events=reflections,
    )


def estimate_unrounded_reference(oracle, center, radius: float, dirs: DirectionBatch,
                                 xi, coordinate: str, spec: CompanderSpec = None,
                                 grid: GridSpec = None, calib=None) -> EstimateResult:
    """The identical stencil with the quantizer replaced by the identity.

    coordinate="weight": losses at x +/- radius*u, no quantizer at all.
    coordinate="z": center may be a ZState (grid-aligned pairing; radius is
    the grid spacing and endpoints reuse the caq index arithmetic) or a
    float z vector (off-grid pairing; endpoints z +/- radius*u, no U).
    """
    if coordinate == "weight":
        x = np.asarray(center, dtype=float)
        plus = x[None, :] + radius * dirs.values
        minus = x[None, :] - radius * dirs.values
        boundary = 0
    elif coordinate == "z":
        if isinstance(center, ZState):
            radius = center.grid.delta
            plus_idx, minus_idx, boundary = caq_endpoint_indices(center, dirs)
            scales = center.coordinate_scales()
            plus = phi_inv(reconstruct(plus_idx, center.grid), spec, scales)
            minus = phi_inv(reconstruct(minus_idx, center.grid), spec, scales)
        else:
            z = np.asarray(center, dtype=float)
            d = z.shape[0]
            scales = spec.clip_scale if calib is None else calib.per_coordinate(d)
            # phi_inv is undefined outside the grid range, so unrounded
            # endpoints are clamped to it (rounding stays off).
            plus = phi_inv(np.clip(z[None, :] + radius * dirs.values,
                                   grid.z_min, grid.z_max), spec, scales)
            minus = phi_inv(np.clip(z[None, :] - radius * dirs.values,
                                    grid.z_min, grid.z_max), spec, scales)
            boundary = 0
    else:
        raise ValueError(f"unknown coordinate {coordinate!r}")
    losses = _evaluate_pairs(oracle, plus, minus, xi)
    return EstimateResult(
        estimate=_combine(losses, radius, dirs),
        endpoint_losses=losses,
        radius=radius,
        directions=dirs,
        rounded_endpoints_used=False,
        boundary_events=boundary,
    )
