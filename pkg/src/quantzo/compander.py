"""Scalar companders, the uniform z-grid, and the composite quantizer Q.

A compander is a strictly increasing scalar map phi applied coordinatewise;
quantization is uniform in z = phi(x) and the composite quantizer is
Q = phi_inv(U(phi(x))). Four families are implemented:

* ``identity``         z = x / alpha                      z-range [-1, 1]
* ``mu_law``           z = sgn(y) log(1+c|y|)/log(1+c)    z-range [-1, 1]
* ``a_law``            piecewise linear/log               z-range [-1, 1]
* ``gaussian_quantile`` z = Phi(x / (s * alpha))          z-range (0, 1)

with y = x/alpha and alpha the per-block clip scale. The identity family
divides by alpha so that the clip range [-alpha, alpha] always maps onto
the full z-range; for alpha = 1 it is literally the identity map. The
gaussian_quantile grid is truncated to [Phi(-4), Phi(4)] so every grid
value has a finite preimage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

FAMILIES = ("identity", "mu_law", "a_law", "gaussian_quantile")
BOUNDED_FAMILIES = ("identity", "mu_law", "a_law")

#: z-grid truncation for the quantile family, in standard deviations.
GAUSSIAN_TAIL = 4.0

#: Smallest admissible block scale; calibration never returns less.
SCALE_FLOOR = 1e-8

_DEFAULT_STRENGTH = {
    "identity": 1.0,
    "mu_law": 255.0,
    "a_law": 87.6,
    "gaussian_quantile": 1.0,
}


class ConfigError(ValueError):
    """Invalid compander, grid, or calibration configuration."""


@dataclass(frozen=True)
class CompanderSpec:
    """Family plus parameters defining phi, phi_inv, and the z-range.

    ``strength`` is c for mu_law, A for a_law, and the distribution scale s
    for gaussian_quantile (unused by identity). ``clip_scale`` is the
    weight-space clipping half-range alpha; for gaussian_quantile it
    multiplies s, so per-block calibration rescales the distribution.
    """

    family: str
    strength: float = None  # type: ignore[assignment]  # resolved per family
    clip_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown compander family {self.family!r}")
        if self.strength is None:
            object.__setattr__(self, "strength", _DEFAULT_STRENGTH[self.family])
        if not (self.strength > 0) or not math.isfinite(self.strength):
            raise ConfigError(f"strength must be positive, got {self.strength}")
        if not (self.clip_scale > 0) or not math.isfinite(self.clip_scale):
            raise ConfigError(f"clip_scale must be positive, got {self.clip_scale}")

    @property
    def bounded(self) -> bool:
        return self.family in BOUNDED_FAMILIES

    def z_range(self) -> tuple[float, float]:
        """Endpoints of the uniform z-grid for this family."""
        if self.family == "gaussian_quantile":
            return float(ndtr(-GAUSSIAN_TAIL)), float(ndtr(GAUSSIAN_TAIL))
        return -1.0, 1.0


def _scale_of(spec: CompanderSpec, scale) -> np.ndarray:
    a = spec.clip_scale if scale is None else scale
    return np.asarray(a, dtype=float)


def phi(x, spec: CompanderSpec, scale=None):
    """Compress weights into the z coordinate.

    Bounded families clamp |x| to the clip scale first (callers count clip
    events separately via :func:`clip_events`). ``scale`` overrides the
    spec's scalar clip_scale, typically with a per-coordinate array of
    block scales.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to phi")
    a = _scale_of(spec, scale)
    if spec.family == "gaussian_quantile":
        out = ndtr(x / (spec.strength * a))
    else:
        y = np.clip(x / a, -1.0, 1.0)
        if spec.family == "identity":
            out = y
        elif spec.family == "mu_law":
            c = spec.strength
            out = np.sign(y) * np.log1p(c * np.abs(y)) / np.log1p(c)
        else:  # a_law
            A = spec.strength
            t = np.abs(y)
            denom = 1.0 + math.log(A)
            v = np.where(t < 1.0 / A,
                         A * t / denom,
                         (1.0 + np.log(np.maximum(A * t, 1.0))) / denom)
            out = np.sign(y) * v
    return float(out) if np.ndim(out) == 0 else out


def phi_inv(z, spec: CompanderSpec, scale=None):
    """Expand z values back to weights. Raises on z outside the family range."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input to phi_inv")
    a = _scale_of(spec, scale)
    if spec.family == "gaussian_quantile":
        if np.any(z <= 0.0) or np.any(z >= 1.0):
            raise ValueError("z outside (0, 1) for gaussian_quantile expander")
        out = spec.strength * a * ndtri(z)
    else:
        if np.any(np.abs(z) > 1.0):
            raise ValueError("z outside [-1, 1]")
        if spec.family == "identity":
            out = a * z
        elif spec.family == "mu_law":
            c = spec.strength
            out = a * np.sign(z) * np.expm1(np.abs(z) * np.log1p(c)) / c
        else:  # a_law
            A = spec.strength
            t = np.abs(z)
            denom = 1.0 + math.log(A)
            knee = 1.0 / denom
            y = np.where(t < knee,
                         t * denom / A,
                         np.exp(np.minimum(t, 1.0) * denom - 1.0) / A)
            out = a * np.sign(z) * y
    return float(out) if np.ndim(out) == 0 else out


def phi_slope(x, spec: CompanderSpec, scale=None):
    """Analytic derivative d phi / dx, evaluated on the clamped domain."""
    x = np.asarray(x, dtype=float)
    a = _scale_of(spec, scale)
    if spec.family == "gaussian_quantile":
        u = x / (spec.strength * a)
        out = np.exp(-0.5 * u * u) / (math.sqrt(2.0 * math.pi) * spec.strength * a)
    else:
        t = np.minimum(np.abs(x) / a, 1.0)
        if spec.family == "identity":
            out = np.broadcast_to(1.0 / a, t.shape).copy() if t.ndim else 1.0 / a
        elif spec.family == "mu_law":
            c = spec.strength
            out = (c / a) / ((1.0 + c * t) * np.log1p(c))
        else:  # a_law
            A = spec.strength
            denom = 1.0 + math.log(A)
            out = np.where(t < 1.0 / A,
                           A / (a * denom),
                           1.0 / (a * np.maximum(t, 1.0 / A) * denom))
    return float(out) if np.ndim(out) == 0 else out


def expander_slope(z, spec: CompanderSpec, scale=None):
    """Analytic derivative d phi_inv / dz, via 1 / phi'(phi_inv(z))."""
    return 1.0 / phi_slope(phi_inv(z, spec, scale), spec, scale)


def slope_extremes(lo: float, hi: float, spec: CompanderSpec, scale=None) -> tuple[float, float]:
    """(min, max) of phi' over the interval [lo, hi].

    Every implemented family has a slope that is an even function of x and
    nonincreasing in |x|, so the extremes sit at the interval's extreme
    |x| values (max slope at the point closest to 0).
    """
    if hi < lo:
        lo, hi = hi, lo
    a = float(np.max(_scale_of(spec, scale)))
    if spec.bounded:
        lo, hi = max(lo, -a), min(hi, a)
    far = max(abs(lo), abs(hi))
    near = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi))
    return float(phi_slope(far, spec, scale)), float(phi_slope(near, spec, scale))


@dataclass(frozen=True)
class GridSpec:
    """Endpoints-inclusive uniform z-grid: z_i = z_min + i * delta.

    The tie rule is fixed to round-half-to-even on the grid index.
    ``bits`` is set when the grid came from a bit-width (levels = 2**bits);
    grids with arbitrary level counts leave it None.
    """

    levels: int
    z_min: float
    z_max: float
    bits: int = None  # type: ignore[assignment]
    delta: float = field(init=False)

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError("grid needs at least 2 levels")
        if not self.z_max > self.z_min:
            raise ConfigError("z_max must exceed z_min")
        if self.bits is not None and self.levels != 2 ** self.bits:
            raise ConfigError("levels inconsistent with bits")
        object.__setattr__(self, "delta", (self.z_max - self.z_min) / (self.levels - 1))

    @classmethod
    def from_bits(cls, bits: int, spec: CompanderSpec) -> "GridSpec":
        if bits < 1:
            raise ConfigError("bits must be >= 1")
        z_min, z_max = spec.z_range()
        return cls(levels=2 ** bits, z_min=z_min, z_max=z_max, bits=bits)

    def values(self) -> np.ndarray:
        return self.z_min + np.arange(self.levels) * self.delta


def reconstruct(indices, grid: GridSpec):
    """Grid values for integer indices; the one canonical index -> z map."""
    out = grid.z_min + np.asarray(indices) * grid.delta
    return float(out) if np.ndim(out) == 0 else out


def quantize_uniform(z, grid: GridSpec):
    """Nearest grid index, round-half-to-even on the index, clamped to range."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite input to quantize_uniform")
    idx = np.rint((z - grid.z_min) / grid.delta)
    idx = np.clip(idx, 0, grid.levels - 1).astype(np.int64)
    return int(idx) if np.ndim(idx) == 0 else idx


def range_clip_count(z, grid: GridSpec) -> int:
    """Number of coordinates outside [z_min, z_max] (counted, not raised)."""
    z = np.asarray(z, dtype=float)
    return int(np.count_nonzero((z < grid.z_min) | (z > grid.z_max)))


def clip_events(x, spec: CompanderSpec, grid: GridSpec, scale=None) -> int:
    """Coordinates clamped anywhere along x -> phi -> U."""
    x = np.asarray(x, dtype=float)
    a = _scale_of(spec, scale)
    if spec.bounded:
        return int(np.count_nonzero(np.abs(x) > a))
    return range_clip_count(phi(x, spec, a), grid)


@dataclass(frozen=True)
class BlockCalibration:
    """Per-block clip scales: coordinates j in [b*block_size, (b+1)*block_size)
    share scale scales[b]. recalib_period R is the step interval between
    recalibrations (0 disables them)."""

    block_size: int
    scales: np.ndarray
    recalib_period: int = 0

    def __post_init__(self):
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=float))
        if np.any(self.scales <= 0):
            raise ConfigError("block scales must be positive")
        if self.recalib_period < 0:
            raise ConfigError("recalib_period must be >= 0")

    @classmethod
    def from_weights(cls, x, block_size: int, recalib_period: int = 0) -> "BlockCalibration":
        scales = calibrated_scales(x, block_size)
        return cls(block_size=block_size, scales=scales, recalib_period=recalib_period)

    def per_coordinate(self, d: int) -> np.ndarray:
        expanded = np.repeat(self.scales, self.block_size)[:d]
        if expanded.shape[0] != d:
            raise ConfigError("calibration does not cover all coordinates")
        return expanded


def calibrated_scales(x, block_size: int) -> np.ndarray:
    """Per-block max-abs scales, floored at SCALE_FLOOR."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    n_blocks = -(-d // block_size)
    padded = np.zeros(n_blocks * block_size)
    padded[:d] = np.abs(x)
    return np.maximum(padded.reshape(n_blocks, block_size).max(axis=1), SCALE_FLOOR)


def calibrate_scales(x, calib: BlockCalibration) -> np.ndarray:
    """Recompute block scales from current weights (block partition fixed)."""
    return calibrated_scales(x, calib.block_size)


@dataclass(frozen=True)
class ZState:
    """Exact integer-index representation of an on-grid z iterate.

    Reconstructed z values are grid points by construction; all on-grid
    arithmetic must go through ``reconstruct`` on the indices rather than
    float z +/- delta sums, which are not grid-exact.
    """

    indices: np.ndarray
    grid: GridSpec
    block_scales: np.ndarray
    block_size: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx > self.grid.levels - 1):
            raise ConfigError("grid index out of range")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "block_scales", np.asarray(self.block_scales, dtype=float))

    @property
    def d(self) -> int:
        return self.indices.shape[0]

    def coordinate_scales(self) -> np.ndarray:
        expanded = np.repeat(self.block_scales, self.block_size)[:self.d]
        if expanded.shape[0] != self.d:
            raise ConfigError("block scales do not cover all coordinates")
        return expanded

    def z(self) -> np.ndarray:
        return reconstruct(self.indices, self.grid)

    def to_weights(self, spec: CompanderSpec) -> np.ndarray:
        return phi_inv(self.z(), spec, self.coordinate_scales())


def project_weights(x, spec: CompanderSpec, grid: GridSpec,
                    calib: BlockCalibration) -> tuple[np.ndarray, int]:
    """Map weights to grid indices, returning (indices, clip event count)."""
    x = np.asarray(x, dtype=float)
    a = calib.per_coordinate(x.shape[-1])
    clips = clip_events(x, spec, grid, a)
    z = phi(x, spec, a)
    return quantize_uniform(z, grid), clips


def quantize_Q(x, spec: CompanderSpec, grid: GridSpec, calib: BlockCalibration) -> np.ndarray:
    """Composite quantizer phi_inv(U(phi(x))) with per-block scales.

    Idempotent at the index level: re-projecting the output recovers the
    same indices.
    """
    x = np.asarray(x, dtype=float)
    a = calib.per_coordinate(x.shape[-1])
    idx, _ = project_weights(x, spec, grid, calib)
    return phi_inv(reconstruct(idx, grid), spec, a)


@dataclass(frozen=True)
class Quantizer:
    """Bundled (spec, grid, calib) triple: the low-precision evaluation map."""

    spec: CompanderSpec
    grid: GridSpec
    calib: BlockCalibration

    def indices(self, x) -> tuple[np.ndarray, int]:
        return project_weights(x, self.spec, self.grid, self.calib)

    def apply(self, x) -> tuple[np.ndarray, int]:
        x = np.asarray(x, dtype=float)
        a = self.calib.per_coordinate(x.shape[-1])
        idx, clips = project_weights(x, self.spec, self.grid, self.calib)
        return phi_inv(reconstruct(idx, self.grid), self.spec, a), clips

    def state(self, x) -> tuple[ZState, int]:
        x = np.asarray(x, dtype=float)
        idx, clips = project_weights(x, self.spec, self.grid, self.calib)
        zs = ZState(indices=idx, grid=self.grid,
                    block_scales=self.calib.scales, block_size=self.calib.block_size)
        return zs, clips

    def with_scales(self, scales: np.ndarray) -> "Quantizer":
        return Quantizer(self.spec, self.grid, replace(self.calib, scales=scales))
