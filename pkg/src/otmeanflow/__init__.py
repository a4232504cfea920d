"""One-step mean-flow generative modeling with optimal-transport mini-batch couplings.

The package trains a small MLP to predict the average velocity u(x, t, r) of
a flow between two 2D distributions, pairing each training batch with an
optimal-transport (or entropic / low-rank / sliced) coupling instead of
independent sampling.  A trained model generates in a single Euler step
x1 = x0 + u(x0, 1, 0); evaluation reports the exact empirical squared
2-Wasserstein distance to held-out target batches.
"""

from .coupling import (
    COUPLING_KINDS,
    CouplingSpec,
    PivotMeasure,
    TransportPlan,
    cost_matrix,
    couple,
    independent_plan,
    sample_pairs,
    solve_exact,
    solve_lot_hr,
    solve_lot_lr,
    solve_sinkhorn,
    solve_sliced,
)
from .data import DatasetSpec, PointBatch, sample
from .evaluation import InferenceSpec, MetricRow, generate, straightness, w2_squared
from .training import RunConfig, TimeSamplerSpec, TrainState, compute_u_target, train, train_step

__version__ = "0.1.0"

__all__ = [
    "COUPLING_KINDS",
    "CouplingSpec",
    "DatasetSpec",
    "InferenceSpec",
    "MetricRow",
    "PivotMeasure",
    "PointBatch",
    "RunConfig",
    "TimeSamplerSpec",
    "TrainState",
    "TransportPlan",
    "compute_u_target",
    "cost_matrix",
    "couple",
    "generate",
    "independent_plan",
    "sample",
    "sample_pairs",
    "solve_exact",
    "solve_lot_hr",
    "solve_lot_lr",
    "solve_sinkhorn",
    "solve_sliced",
    "straightness",
    "train",
    "train_step",
    "w2_squared",
    "__version__",
]
