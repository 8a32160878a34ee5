"""Optimal transport on the shared state-action lattice."""
from .backend import BACKEND
from .core import (
    BarycenterConfig,
    CostMatrix,
    SinkhornError,
    TransportPlan,
    build_cost_matrix,
    check_simplex,
    cost_from_points,
    entropic_barycenter,
    exact_w2,
    floor_mass,
    sinkhorn_w2,
    w2_weighted_objective,
)

__all__ = [
    "BACKEND",
    "BarycenterConfig",
    "CostMatrix",
    "SinkhornError",
    "TransportPlan",
    "build_cost_matrix",
    "check_simplex",
    "cost_from_points",
    "entropic_barycenter",
    "exact_w2",
    "floor_mass",
    "sinkhorn_w2",
    "w2_weighted_objective",
]
