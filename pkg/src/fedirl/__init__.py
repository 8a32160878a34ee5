"""Federated MaxEnt IRL with Wasserstein-barycentric reward fusion on grid worlds."""
from .fusion import FusedReward, ProbeSet, fuse_barycenter, fuse_mean, recover_parameters, shift_normalize
from .gridworld import GridEnv, GridSpec, build_lattice, feature_map, make_env, shared_lattice
from .irl import IrlConfig, IrlResult, run_maxent_irl
from .ot import BACKEND, BarycenterConfig, entropic_barycenter, exact_w2, sinkhorn_w2

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BarycenterConfig",
    "FusedReward",
    "GridEnv",
    "GridSpec",
    "IrlConfig",
    "IrlResult",
    "ProbeSet",
    "build_lattice",
    "entropic_barycenter",
    "exact_w2",
    "feature_map",
    "fuse_barycenter",
    "fuse_mean",
    "make_env",
    "recover_parameters",
    "run_maxent_irl",
    "shared_lattice",
    "shift_normalize",
    "sinkhorn_w2",
]
