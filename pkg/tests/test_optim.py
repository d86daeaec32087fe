import numpy as np
import pytest

from quantzo.compander import (
    BlockCalibration,
    CompanderSpec,
    GridSpec,
    Quantizer,
    ZState,
    phi,
    phi_inv,
    quantize_uniform,
    reconstruct,
)
from quantzo.estimators import sample_directions
from quantzo.objectives import ObjectiveSpec, StochasticOracle, evaluate
from quantzo.optim import (
    AdamParams,
    FPMasterState,
    OptimizerConfig,
    RunFailure,
    run,
    step_fp_master,
    step_strict_alg1,
)
from quantzo.seeds import STREAM_DIRECTIONS, STREAM_START, derive_seed, uniform_start


def identity_setup(d, bits=4, clip=2.0):
    spec = CompanderSpec("identity", clip_scale=clip)
    grid = GridSpec.from_bits(bits, spec)
    calib = BlockCalibration(block_size=d, scales=np.array([clip]))
    return spec, grid, calib


class ZeroOracle:
    def loss(self, x, xi):
        return 0.0


# ---------------------------------------------------------------- config

def test_strict_mode_requires_caq():
    with pytest.raises(ValueError):
        OptimizerConfig(method="ws_rademacher", mode="strict_alg1")


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        OptimizerConfig(method="mezo")


# ---------------------------------------------------------------- strict step

def test_strict_zero_estimate_keeps_state():
    d = 5
    spec, grid, calib = identity_setup(d)
    state = ZState(np.full(d, 7), grid, calib.scales, block_size=d)
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=0.1)
    new_state, info = step_strict_alg1(state, cfg, ZeroOracle(), spec, 0, dir_seed=3, xi=0)
    np.testing.assert_array_equal(new_state.indices, state.indices)
    assert info.projection_sq == 0.0


def test_strict_deadzone_returns_same_indices():
    # |eta * g| < delta/2 everywhere: round-to-nearest snaps back
    d = 4
    spec, grid, calib = identity_setup(d, bits=2)  # delta = 2/3
    state = ZState(np.array([1, 2, 1, 2]), grid, calib.scales, block_size=d)
    oracle = StochasticOracle(ObjectiveSpec("quadratic", d))
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=1e-4)
    new_state, info = step_strict_alg1(state, cfg, oracle, spec, 0, dir_seed=5, xi=0)
    np.testing.assert_array_equal(new_state.indices, state.indices)
    assert 0 < info.projection_sq <= d * grid.delta ** 2 / 4


def test_strict_step_matches_hand_composition():
    # independent recomputation: estimate from raw pieces, then projection
    d = 4
    spec, grid, calib = identity_setup(d, bits=4, clip=1.0)
    state = ZState(np.array([3, 9, 12, 6]), grid, calib.scales, block_size=d)
    oracle = StochasticOracle(ObjectiveSpec("quadratic", d))
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=0.5, K=2)
    dir_seed = 99
    new_state, info = step_strict_alg1(state, cfg, oracle, spec, 0, dir_seed, xi=0)

    dirs = sample_directions("rademacher", 2, d, dir_seed)
    est = np.zeros(d)
    for k in range(2):
        r = dirs.values[k]
        zp = grid.z_min + (state.indices + r.astype(int)) * grid.delta
        zm = grid.z_min + (state.indices - r.astype(int)) * grid.delta
        fp = evaluate(oracle.base, zp * 1.0)  # identity expander, alpha = 1
        fm = evaluate(oracle.base, zm * 1.0)
        est += (fp - fm) / (2 * grid.delta) * r
    est /= 2
    z_pre = (grid.z_min + state.indices * grid.delta) - cfg.eta * est
    expected_idx = np.clip(np.rint((z_pre - grid.z_min) / grid.delta), 0, 15).astype(int)
    np.testing.assert_array_equal(new_state.indices, expected_idx)
    np.testing.assert_allclose(info.estimate, est, rtol=1e-12)


def test_strict_projection_bound_holds_over_run():
    d = 32
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(4, spec)
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=0.001, K=2, T=200)
    trace = run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=3, block_size=8)
    bound = d * grid.delta ** 2 / 4
    assert len(trace.projection_sq) == 200
    assert max(trace.projection_sq) <= bound + 1e-15


def test_on_grid_invariant_every_step():
    d = 8
    spec = CompanderSpec("a_law")
    grid = GridSpec.from_bits(3, spec)
    calib = BlockCalibration(block_size=d, scales=np.array([1.0]))
    oracle = StochasticOracle(ObjectiveSpec("levy", d))
    x0 = uniform_start(d, 1) * 0.4
    quantizer = Quantizer(spec, grid, calib)
    state, _ = quantizer.state(x0)
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=0.01, K=2)
    for t in range(30):
        state, _ = step_strict_alg1(state, cfg, oracle, spec, t, dir_seed=t, xi=t)
        assert state.indices.dtype == np.int64
        assert np.all((state.indices >= 0) & (state.indices <= grid.levels - 1))
        # the stored z is exactly a reconstructed grid point
        np.testing.assert_array_equal(
            quantize_uniform(state.z(), grid), state.indices)


# ---------------------------------------------------------------- fp master step

def test_fp_master_zero_estimate_keeps_master():
    d = 6
    spec, grid, calib = identity_setup(d)
    state = FPMasterState(values=np.full(d, 0.3), m=np.zeros(d), v=np.zeros(d),
                          t=0, calib=calib, coordinate="weight")
    cfg = OptimizerConfig(method="ws_rademacher", eta=0.05)
    new_state, info = step_fp_master(state, cfg, ZeroOracle(), spec, grid, 0,
                                     dir_seed=1, xi=0)
    np.testing.assert_array_equal(new_state.values, state.values)
    assert info.est_norm == 0.0


def test_adam_first_step_is_signlike():
    # constant elementwise gradient c: first update = eta * c / (|c| + eps)
    d = 3
    spec, grid, calib = identity_setup(d)

    class PlantedLinear:
        # loss <c, x> makes every rademacher two-point estimate equal
        # <c,u>u; with K=1 and u in {-1,1}^d the Adam input is +/-|<c,u>|...
        def __init__(self, c):
            self.c = c

        def loss(self, x, xi):
            return float(self.c @ x)

    c = np.array([2.0, -2.0, 2.0])
    oracle = PlantedLinear(c)
    state = FPMasterState(values=np.zeros(d), m=np.zeros(d), v=np.zeros(d), t=0,
                          calib=calib, coordinate="weight")
    cfg = OptimizerConfig(method="ws_rademacher", eta=0.01, K=1,
                          clip_norm=1e9, adam=AdamParams())
    new_state, info = step_fp_master(state, cfg, oracle, spec, grid, 0, dir_seed=8, xi=0)
    g = info.estimate
    expected = -cfg.eta * g / (np.abs(g) + cfg.adam.eps)
    np.testing.assert_allclose(new_state.values, expected, rtol=1e-12)
    # sign-like: magnitude ~ eta in every coordinate
    np.testing.assert_allclose(np.abs(new_state.values), cfg.eta, rtol=1e-6)


def test_fp_master_three_steps_match_independent_reimplementation():
    d = 4
    seed = 5
    spec, grid, _ = identity_setup(d, bits=3, clip=2.0)
    objective = ObjectiveSpec("quadratic", d)
    cfg = OptimizerConfig(method="ws_rademacher", eta=0.01, K=2, mu=0.05,
                          clip_norm=1.0, T=3, recalib_period=0)
    trace = run(cfg, objective, spec, grid, seed=seed, block_size=d, log_stride=1)

    # independent reimplementation of the same sequence
    x0 = uniform_start(d, derive_seed(seed, STREAM_START))
    scales = np.maximum(np.max(np.abs(x0)), 1e-8) * np.ones(1)
    calib = BlockCalibration(block_size=d, scales=scales)
    a = calib.per_coordinate(d)
    master = x0.copy()
    m = np.zeros(d)
    v = np.zeros(d)
    for t in (1, 2, 3):
        dirs = sample_directions("rademacher", 2, d, derive_seed(seed, STREAM_DIRECTIONS, t))
        est = np.zeros(d)
        for k in range(2):
            u = dirs.values[k]
            losses = []
            for sgn in (1.0, -1.0):
                y = master + sgn * cfg.mu * u
                yc = np.clip(y, -a, a)
                idx = np.clip(np.rint((yc / a + 1) / grid.delta), 0, grid.levels - 1)
                q = a * (-1 + idx * grid.delta)
                losses.append(evaluate(objective, q))
            est += (losses[0] - losses[1]) / (2 * cfg.mu) * u
        est /= 2
        g = est if np.linalg.norm(est) <= 1.0 else est / np.linalg.norm(est)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** t)
        vh = v / (1 - 0.999 ** t)
        master = master - cfg.eta * mh / (np.sqrt(vh) + 1e-8)
    yc = np.clip(master, -a, a)
    idx = np.clip(np.rint((yc / a + 1) / grid.delta), 0, grid.levels - 1)
    expected_q = evaluate(objective, a * (-1 + idx * grid.delta))
    assert trace.records[-1].loss_master == pytest.approx(evaluate(objective, master), rel=1e-12)
    assert trace.records[-1].loss_quantized == pytest.approx(expected_q, rel=1e-12)


def test_caq_fp_master_queries_on_grid():
    # grid projection of the master must give exact on-grid queries (no
    # residual channel), regardless of master drift
    d = 6
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(4, spec)
    cfg = OptimizerConfig(method="caq", eta=0.01, K=2, T=20)
    trace = run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=2, block_size=d)
    assert np.isfinite(trace.final_loss)


# ---------------------------------------------------------------- run contract

def test_run_t0_trace():
    d = 4
    spec, grid, _ = identity_setup(d)
    cfg = OptimizerConfig(method="caq", T=0)
    trace = run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=0, block_size=d)
    assert len(trace.records) == 1
    assert trace.records[0].step == 0
    assert trace.gap_ratio == pytest.approx(1.0)


def test_run_eta_zero_gap_one():
    d = 4
    spec, grid, _ = identity_setup(d)
    cfg = OptimizerConfig(method="ws_rademacher", eta=0.0, T=5)
    trace = run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=1, block_size=d)
    assert trace.gap_ratio == pytest.approx(1.0)
    assert trace.final_loss == trace.start_loss


def test_run_bitwise_deterministic():
    d = 16
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(2, spec)
    cfg = OptimizerConfig(method="caq", T=25, recalib_period=10)
    a = run(cfg, ObjectiveSpec("rosenbrock", d), spec, grid, seed=7, block_size=4)
    b = run(cfg, ObjectiveSpec("rosenbrock", d), spec, grid, seed=7, block_size=4)
    assert [r.__dict__ for r in a.records] == [r.__dict__ for r in b.records]
    assert a.gap_ratio == b.gap_ratio


def test_methods_are_start_matched():
    # same seed -> same start vector and same per-step direction seeds,
    # independent of method
    d = 8
    spec, grid, _ = identity_setup(d)
    traces = {}
    for method in ("caq", "ws_rademacher"):
        cfg = OptimizerConfig(method=method, T=1)
        traces[method] = run(cfg, ObjectiveSpec("quadratic", d), spec, grid,
                             seed=4, block_size=d)
    # identical quantized start loss: both methods deploy Q(x0) at step 0
    assert traces["caq"].start_loss == traces["ws_rademacher"].start_loss
    s1 = derive_seed(4, STREAM_DIRECTIONS, 1)
    d1 = sample_directions("rademacher", 4, d, s1)
    d2 = sample_directions("rademacher", 4, d, s1)
    np.testing.assert_array_equal(d1.values, d2.values)


@pytest.mark.filterwarnings("ignore:overflow")
def test_run_failure_carries_step_and_seed():
    # an overflowing noise term makes the first endpoint loss non-finite
    d = 3
    spec, grid, _ = identity_setup(d)
    cfg = OptimizerConfig(method="caq", mode="strict_alg1", eta=0.01, T=5, K=1)
    with pytest.raises(RunFailure) as err:
        run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=0, block_size=d,
            sigma=1e308)
    assert err.value.step >= 1
    assert err.value.seed == 0


def test_recalibration_counted_and_shrinks_scales():
    d = 16
    spec = CompanderSpec("mu_law")
    grid = GridSpec.from_bits(4, spec)
    cfg = OptimizerConfig(method="caq", T=40, recalib_period=10, eta=0.02)
    trace = run(cfg, ObjectiveSpec("quadratic", d), spec, grid, seed=5, block_size=4)
    assert trace.recalibs == 3  # t = 10, 20, 30 (not at the final step)
    assert trace.records[-1].recalibs == 3
