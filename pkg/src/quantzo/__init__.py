"""Zeroth-order optimization through low-precision forward evaluation
with companding quantizers."""

__version__ = "0.1.0"

from .compander import (
    BlockCalibration,
    CompanderSpec,
    ConfigError,
    GridSpec,
    Quantizer,
    ZState,
    calibrate_scales,
    phi,
    phi_inv,
    quantize_Q,
    quantize_uniform,
)
from .estimators import (
    DirectionBatch,
    EstimateResult,
    estimate_caq,
    estimate_offgrid_z,
    estimate_unrounded_reference,
    estimate_weight_space,
    sample_directions,
)
from .objectives import ObjectiveSpec, StochasticOracle, evaluate, gradient
from .optim import AdamParams, OptimizerConfig, RunTrace, run

__all__ = [
    "AdamParams",
    "BlockCalibration",
    "CompanderSpec",
    "ConfigError",
    "DirectionBatch",
    "EstimateResult",
    "GridSpec",
    "ObjectiveSpec",
    "OptimizerConfig",
    "Quantizer",
    "RunTrace",
    "StochasticOracle",
    "ZState",
    "calibrate_scales",
    "estimate_caq",
    "estimate_offgrid_z",
    "estimate_unrounded_reference",
    "estimate_weight_space",
    "evaluate",
    "gradient",
    "phi",
    "phi_inv",
    "quantize_Q",
    "quantize_uniform",
    "run",
    "sample_directions",
]
