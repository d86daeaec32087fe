import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantzo.compander import (
    BlockCalibration,
    CompanderSpec,
    ConfigError,
    GridSpec,
    Quantizer,
    calibrate_scales,
    calibrated_scales,
    clip_events,
    phi,
    phi_inv,
    phi_slope,
    quantize_Q,
    quantize_uniform,
    range_clip_count,
    reconstruct,
    slope_extremes,
)

FAMILY_SPECS = [
    CompanderSpec("identity"),
    CompanderSpec("mu_law"),
    CompanderSpec("a_law"),
    CompanderSpec("gaussian_quantile"),
]


def spec_ids(spec):
    return spec.family


# ---------------------------------------------------------------- phi / phi_inv

def test_mu_law_endpoints():
    spec = CompanderSpec("mu_law", strength=255.0, clip_scale=1.0)
    assert phi(0.0, spec) == 0.0
    assert phi(1.0, spec) == 1.0
    assert phi(-1.0, spec) == -1.0


def test_mu_law_half_matches_high_precision_formula():
    # Independent oracle: direct formula at 50 digits via mpmath.
    import mpmath as mp

    mp.mp.dps = 50
    expected = float(mp.log(1 + 255 * mp.mpf("0.5")) / mp.log(1 + mp.mpf(255)))
    assert expected == pytest.approx(0.8757030686492349, abs=1e-15)  # frozen
    spec = CompanderSpec("mu_law", strength=255.0, clip_scale=1.0)
    assert phi(0.5, spec) == pytest.approx(expected, rel=1e-14)


def test_identity_inverse_is_identity():
    spec = CompanderSpec("identity", clip_scale=1.0)
    assert phi_inv(0.25, spec) == 0.25


def test_mu_law_inverse_endpoint():
    spec = CompanderSpec("mu_law")
    assert phi_inv(1.0, spec) == pytest.approx(1.0, rel=1e-15)


def test_a_law_roundtrip_point():
    spec = CompanderSpec("a_law", strength=87.6)
    assert phi_inv(phi(0.3, spec), spec) == pytest.approx(0.3, rel=1e-12)


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=spec_ids)
def test_roundtrip_tolerance_over_samples(spec):
    # 1e4 samples strictly inside the clip interval, relative error <= 1e-12.
    rng = np.random.default_rng(11)
    if spec.family == "gaussian_quantile":
        x = rng.uniform(-3.95, 3.95, 10_000) * spec.strength * spec.clip_scale
    else:
        x = rng.uniform(-0.999, 0.999, 10_000) * spec.clip_scale
    back = phi_inv(phi(x, spec), spec)
    rel = np.abs(back - x) / np.maximum(np.abs(x), 1.0)
    assert rel.max() <= 1e-12


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=spec_ids)
def test_phi_strictly_increasing(spec):
    rng = np.random.default_rng(3)
    span = 4.0 if spec.family == "gaussian_quantile" else 1.0
    x = np.sort(rng.uniform(-span, span, 500) * spec.clip_scale)
    z = phi(x, spec)
    assert np.all(np.diff(z) > 0)


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=spec_ids)
def test_z_range(spec):
    lo, hi = spec.z_range()
    x = np.linspace(-spec.clip_scale, spec.clip_scale, 101)
    z = phi(x, spec)
    assert np.all(z >= lo - 1e-15) and np.all(z <= hi + 1e-15)
    if spec.bounded:
        assert (lo, hi) == (-1.0, 1.0)
    else:
        assert 0.0 < lo < hi < 1.0


def test_phi_rejects_nonfinite():
    spec = CompanderSpec("mu_law")
    with pytest.raises(ValueError):
        phi(float("nan"), spec)
    with pytest.raises(ValueError):
        phi_inv(float("inf"), spec)


def test_bad_configuration_rejected():
    with pytest.raises(ConfigError):
        CompanderSpec("mu_law", strength=-1.0)
    with pytest.raises(ConfigError):
        CompanderSpec("mu_law", clip_scale=0.0)
    with pytest.raises(ConfigError):
        CompanderSpec("nf4_table")


def test_phi_inv_rejects_out_of_range():
    with pytest.raises(ValueError):
        phi_inv(1.5, CompanderSpec("mu_law"))
    with pytest.raises(ValueError):
        phi_inv(1.0, CompanderSpec("gaussian_quantile"))


@pytest.mark.parametrize("spec", FAMILY_SPECS, ids=spec_ids)
def test_phi_slope_matches_central_differences(spec):
    rng = np.random.default_rng(5)
    span = 3.5 if spec.family == "gaussian_quantile" else 0.95
    x = rng.uniform(-span, span, 64) * spec.clip_scale
    h = 1e-6
    numeric = (phi(x + h, spec) - phi(x - h, spec)) / (2 * h)
    analytic = phi_slope(x, spec)
    # a_law slope is discontinuous in curvature at the knee; skip points
    # whose stencil straddles it.
    if spec.family == "a_law":
        knee = spec.clip_scale / spec.strength
        keep = np.abs(np.abs(x) - knee) > 2 * h
        numeric, analytic = numeric[keep], analytic[keep]
    np.testing.assert_allclose(numeric, analytic, rtol=1e-5)


def test_slope_extremes_bracket_interval_slopes():
    spec = CompanderSpec("mu_law")
    lo, hi = -0.2, 0.7
    smin, smax = slope_extremes(lo, hi, spec)
    xs = np.linspace(lo, hi, 257)
    slopes = phi_slope(xs, spec)
    assert smin <= slopes.min() + 1e-12
    assert smax >= slopes.max() - 1e-12


# ---------------------------------------------------------------- uniform grid

@pytest.fixture
def grid5():
    return GridSpec(levels=5, z_min=-1.0, z_max=1.0)


def test_quantize_uniform_nearest(grid5):
    assert quantize_uniform(0.26, grid5) == 3
    assert reconstruct(3, grid5) == 0.5


def test_quantize_uniform_grid_fixed_point(grid5):
    assert quantize_uniform(0.5, grid5) == 3


def test_quantize_uniform_half_to_even_tie(grid5):
    # 0.25 is the midpoint between indices 2 and 3 -> even index 2.
    assert quantize_uniform(0.25, grid5) == 2


def test_quantize_uniform_clamps_and_counts(grid5):
    assert quantize_uniform(5.0, grid5) == 4
    assert quantize_uniform(-5.0, grid5) == 0
    assert range_clip_count(np.array([5.0, -5.0, 0.0]), grid5) == 2


def test_grid_from_bits_matches_z_range():
    spec = CompanderSpec("gaussian_quantile")
    grid = GridSpec.from_bits(4, spec)
    assert grid.levels == 16
    lo, hi = spec.z_range()
    assert grid.z_min == lo and grid.z_max == hi
    assert grid.delta == pytest.approx((hi - lo) / 15)


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec(levels=1, z_min=-1, z_max=1)
    with pytest.raises(ConfigError):
        GridSpec(levels=4, z_min=1, z_max=-1)
    with pytest.raises(ConfigError):
        GridSpec(levels=5, z_min=-1, z_max=1, bits=2)


@given(bits=st.integers(1, 12), i=st.integers(0, 4095))
def test_fixed_point_property(bits, i):
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(bits, spec)
    i = i % grid.levels
    assert quantize_uniform(reconstruct(i, grid), grid) == i


@given(z1=st.floats(-1.2, 1.2), z2=st.floats(-1.2, 1.2))
def test_quantize_monotone(z1, z2):
    grid = GridSpec(levels=9, z_min=-1.0, z_max=1.0)
    lo, hi = min(z1, z2), max(z1, z2)
    assert quantize_uniform(lo, grid) <= quantize_uniform(hi, grid)


@settings(max_examples=200)
@given(z=st.floats(-1.0, 1.0))
def test_rounding_residual_bound(z):
    grid = GridSpec(levels=7, z_min=-1.0, z_max=1.0)
    back = reconstruct(quantize_uniform(z, grid), grid)
    assert abs(z - back) <= grid.delta / 2 + 1e-15


# ---------------------------------------------------------------- quantize_Q

def _single_block(spec, d):
    return BlockCalibration(block_size=d, scales=np.array([spec.clip_scale]))


def test_quantize_Q_identity_reduces_to_uniform_rounding():
    spec = CompanderSpec("identity", clip_scale=1.0)
    grid = GridSpec(levels=5, z_min=-1.0, z_max=1.0)
    calib = _single_block(spec, 2)
    out = quantize_Q(np.array([0.26, -0.9]), spec, grid, calib)
    np.testing.assert_allclose(out, [0.5, -1.0], atol=1e-15)


def test_quantize_Q_identity_specialization_random():
    # identity compander == direct uniform quantization of x on the scaled grid
    spec = CompanderSpec("identity", clip_scale=2.0)
    grid = GridSpec.from_bits(3, spec)
    calib = _single_block(spec, 50)
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, 50)
    via_q = quantize_Q(x, spec, grid, calib)
    direct_idx = np.clip(np.rint((x + 2.0) / (2.0 * grid.delta)), 0, grid.levels - 1)
    direct = -2.0 + direct_idx * (2.0 * grid.delta)
    np.testing.assert_allclose(via_q, direct, rtol=1e-12, atol=1e-15)


def test_quantize_Q_fixed_on_grid_images():
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(3, spec)
    calib = _single_block(spec, 8)
    x = phi_inv(grid.values(), spec)
    quantizer = Quantizer(spec, grid, calib)
    idx1, _ = quantizer.indices(x)
    np.testing.assert_array_equal(idx1, np.arange(8))


def test_quantize_Q_idempotent_at_index_level():
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(2, spec)
    calib = _single_block(spec, 16)
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 16)
    quantizer = Quantizer(spec, grid, calib)
    once, _ = quantizer.apply(x)
    idx_once, _ = quantizer.indices(once)
    idx_x, _ = quantizer.indices(x)
    np.testing.assert_array_equal(idx_once, idx_x)


def test_quantize_Q_mu_law_2bit_matches_composed_oracle():
    # Independent oracle: high-precision phi, explicit nearest-level search
    # over all 4 grid values, high-precision expansion.
    import mpmath as mp

    mp.mp.dps = 50
    c, x = mp.mpf(255), mp.mpf("0.3")
    z = mp.log(1 + c * x) / mp.log(1 + c)
    levels = [mp.mpf(-1) + i * mp.mpf(2) / 3 for i in range(4)]
    nearest = min(levels, key=lambda v: abs(z - v))
    expected = float(mp.sign(nearest) * (mp.power(1 + c, abs(nearest)) - 1) / c)

    spec = CompanderSpec("mu_law", strength=255.0, clip_scale=1.0)
    grid = GridSpec.from_bits(2, spec)
    out = quantize_Q(np.array([0.3]), spec, grid, _single_block(spec, 1))
    assert out[0] == pytest.approx(expected, rel=1e-13)


def test_clip_events_counting():
    spec = CompanderSpec("mu_law", clip_scale=1.0)
    grid = GridSpec.from_bits(2, spec)
    assert clip_events(np.array([0.5, 1.5, -2.0]), spec, grid) == 2
    gspec = CompanderSpec("gaussian_quantile")
    ggrid = GridSpec.from_bits(2, gspec)
    assert clip_events(np.array([0.0, 100.0]), gspec, ggrid) == 1


# ---------------------------------------------------------------- calibration

def test_calibrate_max_abs():
    scales = calibrated_scales(np.array([0.1, -0.4, 0.2]), block_size=3)
    np.testing.assert_allclose(scales, [0.4])


def test_calibrate_zero_block_floor():
    scales = calibrated_scales(np.zeros(3), block_size=3)
    np.testing.assert_allclose(scales, [1e-8])


def test_calibrate_two_blocks():
    calib = BlockCalibration(block_size=2, scales=np.array([1.0, 1.0]))
    scales = calibrate_scales(np.array([1.0, -2.0, 0.5, 0.25]), calib)
    np.testing.assert_allclose(scales, [2.0, 0.5])


def test_per_coordinate_covers_ragged_tail():
    calib = BlockCalibration(block_size=2, scales=np.array([1.0, 3.0]))
    np.testing.assert_allclose(calib.per_coordinate(3), [1.0, 1.0, 3.0])


def test_block_scales_must_be_positive():
    with pytest.raises(ConfigError):
        BlockCalibration(block_size=2, scales=np.array([1.0, 0.0]))
