"""Measured counterparts of the theory's objects: normalized grid span,
rounded chords, endpoint-rounding residuals, and residual slope fits.

Residual probes subtract the unrounded estimator computed with identical
directions and the same shared sample, so the reported quantity isolates
endpoint rounding from direction sampling and oracle noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compander import (
    BlockCalibration,
    CompanderSpec,
    GridSpec,
    Quantizer,
    ZState,
    expander_slope,
    phi,
    phi_inv,
    slope_extremes,
)
from .estimators import (
    GAUSSIAN,
    RADEMACHER,
    estimate_caq,
    estimate_offgrid_z,
    estimate_unrounded_reference,
    estimate_weight_space,
    sample_directions,
)
from .objectives import StochasticOracle, gradient
from .seeds import STREAM_PROBES, derive_seed

#: Reported log10 ratios are floored here; an exactly-zero residual is
#: reported at the floor rather than -inf.
LOG10_FLOOR = -12.0

REGIME_COLLAPSE = "collapse"
REGIME_MATCHED = "matched"
REGIME_OVERSPAN = "overspan"

# Reporting convention only; the theory uses rho < 1, ~ 1, > 1 qualitatively.
_RHO_LOW = 0.75
_RHO_HIGH = 1.5


class DegenerateProbe(ValueError):
    """The probe point's normalizer ||g_star|| is numerically zero; the
    caller should resample the probe point."""


@dataclass(frozen=True)
class SpanReport:
    """Normalized z-grid half-span of a scalar stencil and its regime."""

    rho: float
    regime: str
    phi_slope_bounds: tuple[float, float]
    clipped: bool = False


def grid_span(x: float, u: float, mu: float, spec: CompanderSpec, grid: GridSpec,
              scale=None) -> SpanReport:
    """rho = |phi(x + mu*u) - phi(x - mu*u)| / (2*delta).

    Stencils leaving the clip range are flagged and computed on clamped
    values. The slope bounds are the analytic phi' extremes over the
    stencil interval, so rho * delta / (mu*|u|) always lies between them.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    half = mu * abs(u)
    lo, hi = x - half, x + half
    a = spec.clip_scale if scale is None else float(np.max(scale))
    if spec.bounded:
        clipped = lo < -a or hi > a
    else:
        z_lo, z_hi = sorted((phi(lo, spec, scale), phi(hi, spec, scale)))
        clipped = z_lo < grid.z_min or z_hi > grid.z_max
    zp = min(max(phi(x + mu * u, spec, scale), grid.z_min), grid.z_max)
    zm = min(max(phi(x - mu * u, spec, scale), grid.z_min), grid.z_max)
    rho = abs(zp - zm) / (2.0 * grid.delta)
    if rho < _RHO_LOW:
        regime = REGIME_COLLAPSE
    elif rho <= _RHO_HIGH:
        regime = REGIME_MATCHED
    else:
        regime = REGIME_OVERSPAN
    return SpanReport(rho=rho, regime=regime,
                      phi_slope_bounds=slope_extremes(lo, hi, spec, scale),
                      clipped=clipped)


@dataclass(frozen=True)
class ChordReport:
    """The chord actually measured by a rounded two-point query."""

    chord: np.ndarray
    cosine_to_u: float
    collapsed: bool = False


def rounded_chord(x, u, mu: float, quantizer: Quantizer | None) -> ChordReport:
    """a_Q = (Q(x + mu*u) - Q(x - mu*u)) / (2*mu) and its cosine against u.

    quantizer=None means the identity map, under which the chord equals u.
    A zero chord (both endpoints rounded to the same point) reports cosine
    0 with the collapse flag set.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    plus_raw, minus_raw = x + mu * u, x - mu * u
    if quantizer is None:
        plus, minus = plus_raw, minus_raw
    else:
        plus, _ = quantizer.apply(plus_raw)
        minus, _ = quantizer.apply(minus_raw)
    chord = (plus - minus) / (2.0 * mu)
    norm = float(np.linalg.norm(chord))
    if norm == 0.0:
        return ChordReport(chord=chord, cosine_to_u=0.0, collapsed=True)
    cosine = float(chord @ u / (norm * np.linalg.norm(u)))
    return ChordReport(chord=chord, cosine_to_u=cosine)


@dataclass(frozen=True)
class ResidualSetup:
    """Pins everything a residual probe needs except the probe seed.

    ``state`` is the weight vector for weight-space methods, a ZState for
    the grid-aligned method, or a float z vector for the off-grid method.
    ``mu`` is the stencil radius for weight-space and off-grid queries;
    the grid-aligned radius is always the grid spacing.
    """

    oracle: StochasticOracle
    spec: CompanderSpec
    grid: GridSpec
    calib: BlockCalibration
    K: int
    mu: float
    state: object


@dataclass
class ResidualProbe:
    """Averaged endpoint-rounding residual, normalized by ||g_star||^2."""

    residual_sq: float
    normalizer_sq: float
    log10_ratio: float
    probes: int
    seed: int
    per_probe_ratio: np.ndarray = field(repr=False, default=None)
    per_probe_log10: np.ndarray = field(repr=False, default=None)


def _floored_log10(values: np.ndarray) -> np.ndarray:
    out = np.full(values.shape, LOG10_FLOOR)
    positive = values > 0
    out[positive] = np.maximum(np.log10(values[positive]), LOG10_FLOOR)
    return out


def _normalizer(method: str, setup: ResidualSetup) -> float:
    """||g_star||^2: grad of F(phi_inv(z)) for z-coordinate methods, grad F
    for weight-space methods."""
    if method in ("caq", "offgrid_z"):
        if isinstance(setup.state, ZState):
            z = setup.state.z()
            scales = setup.state.coordinate_scales()
        else:
            z = np.asarray(setup.state, dtype=float)
            scales = setup.calib.per_coordinate(z.shape[0])
        x = phi_inv(z, setup.spec, scales)
        g = gradient(setup.oracle.base, x) * expander_slope(z, setup.spec, scales)
    else:
        g = gradient(setup.oracle.base, np.asarray(setup.state, dtype=float))
    nsq = float(g @ g)
    if math.sqrt(nsq) < 1e-14:
        raise DegenerateProbe("||g_star|| below 1e-14 at the probe point")
    return nsq


def _one_probe(method: str, setup: ResidualSetup, dir_seed: int, xi: int) -> float:
    kind = GAUSSIAN if method == "ws_gaussian" else RADEMACHER
    d = setup.oracle.base.dimension
    dirs = sample_directions(kind, setup.K, d, dir_seed)
    if method in ("ws_rademacher", "ws_gaussian"):
        quantizer = Quantizer(setup.spec, setup.grid, setup.calib)
        measured = estimate_weight_space(setup.oracle, quantizer, setup.state,
                                         setup.mu, dirs, xi)
        reference = estimate_unrounded_reference(setup.oracle, setup.state, setup.mu,
                                                 dirs, xi, "weight")
    elif method == "caq":
        measured = estimate_caq(setup.oracle, setup.spec, setup.grid, setup.state,
                                dirs, xi)
        reference = estimate_unrounded_reference(setup.oracle, setup.state,
                                                 setup.grid.delta, dirs, xi, "z",
                                                 spec=setup.spec, grid=setup.grid)
    elif method == "offgrid_z":
        measured = estimate_offgrid_z(setup.oracle, setup.spec, setup.grid,
                                      setup.state, setup.mu, dirs, xi,
                                      calib=setup.calib)
        reference = estimate_unrounded_reference(setup.oracle, setup.state, setup.mu,
                                                 dirs, xi, "z", spec=setup.spec,
                                                 grid=setup.grid, calib=setup.calib)
    else:
        raise ValueError(f"unknown method {method!r}")
    diff = measured.estimate - reference.estimate
    return float(diff @ diff)


def probe_residual(method: str, setup: ResidualSetup, n_probes: int, seed: int) -> ResidualProbe:
    """Average ||g_meas - g_unrounded||^2 / ||g_star||^2 over independent
    probes, each with fresh directions and a fresh shared sample."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    normalizer_sq = _normalizer(method, setup)
    residuals = np.empty(n_probes)
    for i in range(n_probes):
        dir_seed = derive_seed(seed, STREAM_PROBES, i)
        residuals[i] = _one_probe(method, setup, dir_seed, xi=i)
    ratios = residuals / normalizer_sq
    mean_ratio = float(ratios.mean())
    log10_ratio = LOG10_FLOOR if mean_ratio <= 0 else max(math.log10(mean_ratio), LOG10_FLOOR)
    return ResidualProbe(
        residual_sq=float(residuals.mean()),
        normalizer_sq=normalizer_sq,
        log10_ratio=log10_ratio,
        probes=n_probes,
        seed=seed,
        per_probe_ratio=ratios,
        per_probe_log10=_floored_log10(ratios),
    )


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of log10(residual) against log10(delta^2/mu^2)."""

    slope: float
    intercept: float
    abscissa: np.ndarray
    ordinate: np.ndarray
    flat_signal: bool = False


def fit_loglog_slope(abscissa, ordinate) -> tuple[float, float]:
    abscissa = np.asarray(abscissa, dtype=float)
    ordinate = np.asarray(ordinate, dtype=float)
    if np.ptp(abscissa) == 0.0:
        raise ValueError("degenerate fit: zero variance in abscissa")
    slope, intercept = np.polyfit(abscissa, ordinate, 1)
    return float(slope), float(intercept)


def residual_slope_fit(setup: ResidualSetup, mu_grid, method: str = "ws_rademacher",
                       n_probes: int = 32, seed: int = 0) -> SlopeFit:
    """Fit the residual scaling exponent over a radius sweep.

    Requires at least 5 radii spanning at least 1.5 decades, all in the
    under-resolved regime (per-coordinate rho < 1 at the probe point, unit
    direction convention). A flat signal (all residuals at the zero floor,
    the grid-aligned case) is rejected with the flat_signal flag.
    """
    mu_grid = np.sort(np.asarray(mu_grid, dtype=float))
    if mu_grid.size < 5:
        raise ValueError("need at least 5 radii")
    if math.log10(mu_grid[-1] / mu_grid[0]) < 1.5 - 1e-9:
        raise ValueError("radius sweep must span at least 1.5 decades")
    if method in ("ws_rademacher", "ws_gaussian"):
        x = np.asarray(setup.state, dtype=float)
        scales = setup.calib.per_coordinate(x.shape[0])
        for mu in mu_grid:
            rho = np.max([grid_span(xj, 1.0, mu, setup.spec, setup.grid, aj).rho
                          for xj, aj in zip(x, scales)])
            if rho >= 1.0:
                raise ValueError(f"mu={mu} is not under-resolved (rho={rho:.3f})")
    ratios = np.empty(mu_grid.size)
    for i, mu in enumerate(mu_grid):
        probe = probe_residual(method, ResidualSetup(
            oracle=setup.oracle, spec=setup.spec, grid=setup.grid, calib=setup.calib,
            K=setup.K, mu=float(mu), state=setup.state), n_probes, derive_seed(seed, i))
        ratios[i] = probe.residual_sq / probe.normalizer_sq
    abscissa = np.log10(setup.grid.delta ** 2 / mu_grid ** 2)
    if np.all(ratios <= 10.0 ** LOG10_FLOOR):
        return SlopeFit(slope=float("nan"), intercept=float("nan"),
                        abscissa=abscissa, ordinate=_floored_log10(ratios),
                        flat_signal=True)
    ordinate = _floored_log10(ratios)
    slope, intercept = fit_loglog_slope(abscissa, ordinate)
    return SlopeFit(slope=slope, intercept=intercept,
                    abscissa=abscissa, ordinate=ordinate)
