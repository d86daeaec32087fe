"""Synthetic objective suite with analytic gradients, plus a stochastic
oracle wrapper implementing the shared-sample convention.

All four objectives use their canonical forms and have minimum value 0:

* quadratic   F(x) = 0.5 ||x||^2                    minimizer 0
* levy        standard form with w = 1 + (x-1)/4    minimizer 1
* rosenbrock  sum 100 (x_{i+1} - x_i^2)^2 + (1-x_i)^2   minimizer 1
* ackley      a=20, b=0.2, c=2*pi, with the a + e constant   minimizer 0

The stochastic oracle adds linear noise <g(xi), x> with i.i.d. zero-mean
components of variance sigma^2 / d, so the sampled-gradient variance floor
is exactly sigma^2 and the shared-sample moment identity can be tested in
closed form. g(xi) is a deterministic function of (sample_seed, xi), so
reusing one xi across endpoint evaluations reuses the exact same noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

OBJECTIVES = ("quadratic", "levy", "rosenbrock", "ackley")

_ACKLEY_A = 20.0
_ACKLEY_B = 0.2
_ACKLEY_C = 2.0 * math.pi


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    dimension: int

    def __post_init__(self):
        if self.name not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.name!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.name == "rosenbrock" and self.dimension < 2:
            raise ValueError("rosenbrock needs dimension >= 2")

    def minimizer(self) -> np.ndarray:
        if self.name in ("levy", "rosenbrock"):
            return np.ones(self.dimension)
        return np.zeros(self.dimension)


def _check_dim(spec: ObjectiveSpec, x: np.ndarray):
    if x.shape != (spec.dimension,):
        raise ValueError(f"expected shape ({spec.dimension},), got {x.shape}")


def evaluate(spec: ObjectiveSpec, x) -> float:
    """Deterministic loss F(x)."""
    x = np.asarray(x, dtype=float)
    _check_dim(spec, x)
    if spec.name == "quadratic":
        return 0.5 * float(x @ x)
    if spec.name == "rosenbrock":
        return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))
    if spec.name == "levy":
        w = 1.0 + (x - 1.0) / 4.0
        head = math.sin(math.pi * w[0]) ** 2
        tail = (w[-1] - 1.0) ** 2 * (1.0 + math.sin(2.0 * math.pi * w[-1]) ** 2)
        if spec.dimension > 1:
            wi = w[:-1]
            mid = float(np.sum((wi - 1.0) ** 2 * (1.0 + 10.0 * np.sin(math.pi * wi + 1.0) ** 2)))
        else:
            mid = 0.0
        return float(head + mid + tail)
    # ackley
    d = spec.dimension
    r = math.sqrt(float(x @ x) / d)
    cos_mean = float(np.mean(np.cos(_ACKLEY_C * x)))
    return (-_ACKLEY_A * math.exp(-_ACKLEY_B * r)
            - math.exp(cos_mean) + _ACKLEY_A + math.e)


def gradient(spec: ObjectiveSpec, x) -> np.ndarray:
    """Analytic gradient of F; used to normalize residual probes."""
    x = np.asarray(x, dtype=float)
    _check_dim(spec, x)
    if spec.name == "quadratic":
        return x.copy()
    if spec.name == "rosenbrock":
        g = np.zeros_like(x)
        g[:-1] += -400.0 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2.0 * (1.0 - x[:-1])
        g[1:] += 200.0 * (x[1:] - x[:-1] ** 2)
        return g
    if spec.name == "levy":
        w = 1.0 + (x - 1.0) / 4.0
        gw = np.zeros_like(w)
        gw[0] += math.pi * math.sin(2.0 * math.pi * w[0])
        if spec.dimension > 1:
            wi = w[:-1]
            s = np.sin(math.pi * wi + 1.0)
            gw[:-1] += (2.0 * (wi - 1.0) * (1.0 + 10.0 * s ** 2)
                        + 10.0 * math.pi * (wi - 1.0) ** 2 * np.sin(2.0 * (math.pi * wi + 1.0)))
        wd = w[-1]
        gw[-1] += (2.0 * (wd - 1.0) * (1.0 + math.sin(2.0 * math.pi * wd) ** 2)
                   + 2.0 * math.pi * (wd - 1.0) ** 2 * math.sin(4.0 * math.pi * wd))
        return gw / 4.0
    # ackley; the sqrt term has a cusp at 0, which is the minimizer
    d = spec.dimension
    s = float(x @ x)
    if s == 0.0:
        return np.zeros_like(x)
    r = math.sqrt(s / d)
    cos_mean = float(np.mean(np.cos(_ACKLEY_C * x)))
    return (_ACKLEY_A * _ACKLEY_B / (d * r) * math.exp(-_ACKLEY_B * r) * x
            + (_ACKLEY_C / d) * math.exp(cos_mean) * np.sin(_ACKLEY_C * x))


@dataclass(frozen=True)
class StochasticOracle:
    """f(x; xi) = F(x) + <g(xi), x> with Var[g_j] = noise_std^2 / d.

    One xi is drawn per optimization step and shared by all endpoint
    evaluations in that step; same xi always reproduces the same g(xi).
    """

    base: ObjectiveSpec
    noise_std: float = 0.0
    sample_seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def noise_gradient(self, xi: int) -> np.ndarray:
        d = self.base.dimension
        if self.noise_std == 0.0:
            return np.zeros(d)
        rng = np.random.default_rng([self.sample_seed & 0xFFFFFFFF, int(xi) & 0xFFFFFFFF])
        return (self.noise_std / math.sqrt(d)) * rng.standard_normal(d)

    def loss(self, x, xi: int) -> float:
        x = np.asarray(x, dtype=float)
        base = evaluate(self.base, x)
        if self.noise_std == 0.0:
            return base
        return base + float(self.noise_gradient(xi) @ x)

    def mean_loss(self, x) -> float:
        return evaluate(self.base, x)

    def mean_gradient(self, x) -> np.ndarray:
        return gradient(self.base, x)


def evaluate_stochastic(oracle: StochasticOracle, x, xi: int) -> float:
    return oracle.loss(x, xi)
