"""Unbiased stochastic oracles around deterministic operators.

The noise model is only constrained by its variance in the theory, so
the default is isotropic Gaussian with per-coordinate std sigma/sqrt(d),
which makes E||noise||^2 equal sigma^2 exactly.  ``bounded-uniform``
offers a compactly supported alternative calibrated the same way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import OperatorSpec, eval_operator

NOISE_MODELS = ("gaussian-isotropic", "bounded-uniform", "none")


@dataclass(frozen=True)
class OracleSpec:
    """Stochastic wrapper with E[draw] = V(z) and E||draw - V(z)||^2 <= sigma^2."""

    base: OperatorSpec
    noise_model: str = "gaussian-isotropic"
    sigma: float = 0.0
    smoothing_delta: float = 0.0

    def __post_init__(self):
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.smoothing_delta < 0:
            raise ValueError("smoothing_delta must be nonnegative")

    @property
    def dim(self) -> int:
        return self.base.dim


def noiseless(op: OperatorSpec) -> OracleSpec:
    return OracleSpec(base=op, noise_model="none", sigma=0.0)


def _noise(oracle: OracleSpec, rng: np.random.Generator) -> np.ndarray | None:
    d = oracle.dim
    if oracle.sigma == 0.0 or oracle.noise_model == "none":
        return None
    if oracle.noise_model == "gaussian-isotropic":
        return rng.standard_normal(d) * (oracle.sigma / math.sqrt(d))
    # uniform on [-a, a]^d with a chosen so E||noise||^2 = sigma^2
    a = oracle.sigma * math.sqrt(3.0 / d)
    return rng.uniform(-a, a, size=d)


def sample_oracle(oracle: OracleSpec, z: np.ndarray,
                  rng: np.random.Generator | None = None,
                  delta: float | None = None) -> np.ndarray:
    """One oracle draw at z: V(z + delta * s) + noise.

    ``delta`` overrides the spec's smoothing radius (the smoothed inner
    loop queries with it; outer extra steps pass 0).  With zero sigma
    and delta the draw is exact and no generator is required.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != oracle.dim:
        raise ValueError(
            f"point has dimension {z.shape[-1]}, oracle expects {oracle.dim}")
    if delta is None:
        delta = oracle.smoothing_delta
    needs_rng = delta > 0 or (oracle.sigma > 0 and oracle.noise_model != "none")
    if needs_rng and rng is None:
        raise ValueError("stochastic oracle query requires a generator")
    query = z
    if delta > 0:
        query = z + delta * rng.standard_normal(oracle.dim)
    value = eval_operator(oracle.base, query)
    noise = _noise(oracle, rng) if needs_rng else None
    return value if noise is None else value + noise
