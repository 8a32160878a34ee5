"""Server-side reward fusion.

Client rewards are shifted and normalized onto the simplex, fused as an
entropic W2 barycenter on the shared lattice, mapped back to a reward with a
single normalizer and projected onto the feature basis by least squares.
Parameter averaging is provided as the baseline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .gridworld import FeatureMatrix, GridSpec, StateActionLattice, feature_map, shared_lattice
from .irl import IrlResult
from .ot import BarycenterConfig, CostMatrix, build_cost_matrix, entropic_barycenter

RANK_TOL = 1e-8


class RankDeficientError(np.linalg.LinAlgError):
    pass


def shift_normalize(r, sigma: float) -> tuple[np.ndarray, float]:
    """Map a reward vector to ``(r + sigma) / Z`` with ``Z = sum(r + sigma)``."""
    r = np.asarray(r, dtype=float)
    shifted = r + sigma
    if np.any(shifted <= 0):
        i = int(np.argmin(shifted))
        raise ValueError(
            f"shifted reward at index {i} is {shifted[i]:.6g} <= 0; "
            f"sigma must exceed {-r[i]:.6g}"
        )
    z = float(shifted.sum())
    return shifted / z, z


def choose_sigma(rewards, margin: float = 1.0) -> float:
    rewards = [np.asarray(r, dtype=float) for r in rewards]
    if not rewards:
        raise ValueError("need at least one reward")
    low = min(float(r.min()) for r in rewards)
    return max(0.0, -low) + margin


def back_map(p_bar, z_back: float, sigma: float) -> np.ndarray:
    if z_back <= 0:
        raise ValueError("z_back must be positive")
    return z_back * np.asarray(p_bar, dtype=float) - sigma


def recover_parameters(r_bar, features: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Least-squares parameters through a thin QR factorization of the features."""
    phi = features.phi if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    q, rr = qr(phi, mode="economic")
    smin = np.linalg.svd(rr, compute_uv=False).min()
    if smin < RANK_TOL:
        raise RankDeficientError(f"feature matrix is rank deficient (sigma_min={smin:.3g})")
    return solve_triangular(rr, q.T @ np.asarray(r_bar, dtype=float))


def fuse_mean(thetas, weights=None) -> np.ndarray:
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    if len({t.shape for t in thetas}) != 1:
        raise ValueError("parameter vectors have different dimensions")
    k = len(thetas)
    alpha = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if alpha.shape != (k,):
        raise ValueError("one weight per parameter vector required")
    return alpha @ np.vstack(thetas)


@dataclass
class FusedReward:
    barycenter: np.ndarray
    z_back: float
    reward: np.ndarray
    theta: np.ndarray
    sigma: float
    z_values: list = field(default_factory=list)
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "barycenter": [float(v) for v in self.barycenter],
            "reward": [float(v) for v in self.reward],
            "theta": [float(v) for v in self.theta],
            "sigma": float(self.sigma),
            "z_back": float(self.z_back),
            "z_values": [float(v) for v in self.z_values],
            "trace": {k: [float(v) for v in vals] for k, vals in sorted(self.trace.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "FusedReward":
        return cls(
            barycenter=np.asarray(data["barycenter"]),
            z_back=float(data["z_back"]),
            reward=np.asarray(data["reward"]),
            theta=np.asarray(data["theta"]),
            sigma=float(data["sigma"]),
            z_values=list(data["z_values"]),
            trace=dict(data.get("trace", {})),
        )


def fuse_barycenter(rewards, weights, cost: CostMatrix, config: BarycenterConfig, features: FeatureMatrix,
                    sigma_margin: float = 1.0, sigma: float | None = None,
                    z_back: float | None = None) -> FusedReward:
    """Barycentric fusion of reward vectors on one lattice.

    ``z_back`` defaults to the weighted mean of the client normalizers.
    """
    rewards = [np.asarray(r, dtype=float) for r in rewards]
    k = len(rewards)
    alpha = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    if sigma is None:
        sigma = choose_sigma(rewards, sigma_margin)
    measures, zs = zip(*(shift_normalize(r, sigma) for r in rewards))
    p_bar, trace = entropic_barycenter(np.vstack(measures), cost, config, weights=alpha, log=True)
    if z_back is None:
        z_back = float(alpha @ np.asarray(zs))
    r_bar = back_map(p_bar, z_back, sigma)
    return FusedReward(p_bar, z_back, r_bar, recover_parameters(r_bar, features), sigma, list(zs), trace)


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Server-held deterministic copy of the shared lattice and its features."""

    spec: GridSpec
    lattice: StateActionLattice
    features: FeatureMatrix
    cost: CostMatrix

    @classmethod
    def from_spec(cls, spec: GridSpec, action_penalty: float = 1.0) -> "ProbeSet":
        lattice = shared_lattice(spec.width, spec.height)
        return cls(spec, lattice, feature_map(spec, lattice), build_cost_matrix(lattice, action_penalty=action_penalty))

    def reward(self, theta) -> np.ndarray:
        return self.features.phi @ np.asarray(theta, dtype=float)


@dataclass
class ServerResult:
    fused: FusedReward
    theta_mean: np.ndarray
    client_rewards: list
    weights: np.ndarray


def server_aggregate(payloads: list[str], probe: ProbeSet, weights, config: BarycenterConfig,
                     sigma_margin: float = 1.0) -> ServerResult:
    """Fuse serialized client uploads. Only parameter payloads cross in."""
    if not all(isinstance(p, str) for p in payloads):
        raise TypeError("server accepts serialized uploads only")
    uploads = [IrlResult.from_json(p) for p in payloads]
    thetas = [u.theta_hat for u in uploads]
    rewards = [probe.reward(t) for t in thetas]
    alpha = np.asarray(weights, dtype=float)
    fused = fuse_barycenter(rewards, alpha, probe.cost, config, probe.features, sigma_margin)
    return ServerResult(fused, fuse_mean(thetas, alpha), rewards, alpha)
