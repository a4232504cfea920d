"""Euler inference for average-velocity models and evaluation metrics.

The displacement over [s, t] is (t - s) * u(x, t, s), so a single step with
t = 1, s = 0 is exactly the one-step generator x1 = x0 + u(x0, 1, 0) and T
uniform steps telescope across [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .coupling import cost_matrix, solve_exact


@dataclass
class InferenceSpec:
    nfe: int = 1
    n: int = 2000
    use_ema: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.nfe < 1 or self.n < 1:
            raise ValueError("nfe and n must be >= 1")


@dataclass
class MetricRow:
    name: str
    nfe: int
    value: float
    wall_ms: float

    def __post_init__(self):
        if self.value < 0 and self.name.startswith("w2"):
            raise ValueError("distance metrics must be nonnegative")


def generate(params: nets.MlpParams, x0: np.ndarray, nfe: int) -> np.ndarray:
    """Integrate the flow from the source batch with nfe uniform Euler steps."""
    if nfe < 1:
        raise ValueError("nfe must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    for k in range(1, nfe + 1):
        s = (k - 1) / nfe
        t = k / nfe
        x = x + (t - s) * nets.forward(params, x, t, s)
        if not np.isfinite(x).all():
            raise FloatingPointError(f"non-finite state after step {k}/{nfe}")
    return x


def w2_squared(a: np.ndarray, b: np.ndarray) -> float:
    """Exact empirical squared 2-Wasserstein distance between equal-size batches.

    Mean squared distance under the optimal assignment.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"batch shapes differ: {a.shape} vs {b.shape}")
    n = a.shape[0]
    C = cost_matrix(a, b)
    uniform = np.full(n, 1.0 / n)
    return solve_exact(C, uniform, uniform).cost(C)


def straightness(params: nets.MlpParams, x0: np.ndarray, probe_nfe: int = 8) -> float:
    """Deviation between multi-step and one-step endpoints.

    Mean over probe points of ||x1^(probe_nfe) - x1^(1)||, normalized by the
    RMS norm of the one-step batch; 0 means the learned flow is consistent at
    every step count (perfectly straight trajectories).
    """
    one = generate(params, x0, 1)
    multi = generate(params, x0, probe_nfe)
    scale = float(np.sqrt(np.mean(np.sum(one**2, axis=1))))
    dev = float(np.mean(np.linalg.norm(multi - one, axis=1)))
    return dev / max(scale, 1e-12)
