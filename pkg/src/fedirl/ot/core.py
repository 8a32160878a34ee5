"""Discrete optimal transport on a fixed finite support.

Measures are plain 1-D numpy arrays on the simplex. Costs are squared
ground distances wrapped in :class:`CostMatrix`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .backend import lse_cols, lse_rows

MASS_FLOOR = 1e-12
EXACT_MAX_N = 200
STALL_TOLERANCE = 1e-2  # l1 marginal violation beyond which a plan is not returned


class SinkhornError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """Squared ground distances ``c[i, j] = d(x_i, x_j)**2``."""

    c: np.ndarray
    diameter: float
    min_spacing: float

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def nbytes(self) -> int:
        return self.c.nbytes

    @classmethod
    def from_distances(cls, d: np.ndarray) -> "CostMatrix":
        d = np.asarray(d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        nonzero = d[d > 0]
        if nonzero.size == 0:
            raise ValueError("support needs at least two distinct points")
        c = d * d
        c.setflags(write=False)
        return cls(c, float(d.max()), float(nonzero.min()))

    def permuted(self, perm) -> "CostMatrix":
        perm = np.asarray(perm)
        return CostMatrix.from_distances(np.sqrt(self.c)[np.ix_(perm, perm)])


def build_cost_matrix(lattice, state_metric: str = "euclidean", action_penalty: float = 1.0) -> CostMatrix:
    """Ground metric on state-action pairs: cell distance plus a flat action-mismatch penalty."""
    cells = lattice.cell_coords()
    diff = cells[:, None, :] - cells[None, :, :]
    if state_metric == "euclidean":
        d = np.sqrt((diff**2).sum(-1))
    elif state_metric == "manhattan":
        d = np.abs(diff).sum(-1)
    else:
        raise ValueError(f"unknown state metric {state_metric!r}")
    actions = lattice.action_ids()
    d += action_penalty * (actions[:, None] != actions[None, :])
    return CostMatrix.from_distances(d)


def cost_from_points(points) -> CostMatrix:
    """Squared Euclidean cost between points (1-D positions or (n, k) coordinates)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    diff = pts[:, None, :] - pts[None, :, :]
    return CostMatrix.from_distances(np.sqrt((diff**2).sum(-1)))


def check_simplex(p, atol: float = 1e-10) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > atol:
        raise ValueError("measure must be a nonnegative vector summing to one")
    return p


def floor_mass(p, floor: float = MASS_FLOOR) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=float), floor)
    return p / p.sum()


@dataclass
class TransportPlan:
    plan: np.ndarray
    cost: float

    def marginal_error(self, mu, nu) -> float:
        return float(max(np.abs(self.plan.sum(1) - mu).max(), np.abs(self.plan.sum(0) - nu).max()))


def exact_w2(mu, nu, cost: CostMatrix) -> tuple[TransportPlan, float]:
    """Exact squared-cost transport by linear programming (HiGHS)."""
    mu, nu = check_simplex(mu), check_simplex(nu)
    n = cost.n
    if n > EXACT_MAX_N:
        raise ValueError(f"exact LP limited to n <= {EXACT_MAX_N}, got {n}")
    if mu.shape != (n,) or nu.shape != (n,):
        raise ValueError("measures must live on the cost matrix support")
    # plan variable x[i * n + j]; row sums then column sums
    idx = np.arange(n * n)
    rows = np.concatenate([idx // n, n + idx % n])
    a_eq = coo_matrix((np.ones(2 * n * n), (rows, np.concatenate([idx, idx]))), shape=(2 * n, n * n))
    b_eq = np.concatenate([mu, nu])
    res = linprog(
        cost.c.ravel(),
        A_eq=a_eq.tocsr(),
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise ValueError(f"transport LP failed: {res.message}")
    plan = np.maximum(res.x.reshape(n, n), 0.0)
    total = float((plan * cost.c).sum())
    return TransportPlan(plan, total), float(np.sqrt(max(total, 0.0)))


def _suggest_epsilon(cost: CostMatrix) -> float:
    return cost.diameter**2 / 700.0


def _plan_from_potentials(cost, f, g, eps):
    return np.exp((f[:, None] + g[None, :] - cost.c) / eps)


def _epsilon_schedule(cost: CostMatrix, epsilon: float, factor: float = 0.5) -> list[float]:
    eps = [epsilon]
    start = max(epsilon, cost.diameter**2)
    while eps[-1] * 1.0001 < start:
        eps.append(eps[-1] / factor)
    return eps[::-1]


def sinkhorn_w2(mu, nu, cost: CostMatrix, epsilon: float, iters: int = 20000, tol: float = 1e-7,
                log: bool = False, epsilon_scaling: bool = True):
    """Log-domain Sinkhorn; returns ``(TransportPlan, sharp cost <plan, c>)``.

    Iterates until the row-marginal violation (l1) drops below ``tol`` or
    ``iters`` is exhausted at the target ``epsilon``. With ``epsilon_scaling``
    the potentials are warm-started along a geometric schedule that starts
    at the squared diameter. Zero masses are floored at 1e-12.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a, b = floor_mass(check_simplex(mu)), floor_mass(check_simplex(nu))
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(cost.n)
    g = np.zeros(cost.n)
    violations = []
    schedule = _epsilon_schedule(cost, epsilon) if epsilon_scaling else [epsilon]
    for stage, eps in enumerate(schedule):
        last = stage == len(schedule) - 1
        for it in range(iters if last else 1000):
            f = eps * (log_a - lse_rows(cost.c, g, eps))
            g = eps * (log_b - lse_cols(cost.c, f, eps))
            if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
                raise SinkhornError(
                    f"Sinkhorn potentials overflowed at epsilon={eps}; "
                    f"try epsilon >= {_suggest_epsilon(cost):.3g}"
                )
            if it % 5 == 4 or it == iters - 1:
                rows = np.exp(f / eps + lse_rows(cost.c, g, eps))
                err = float(np.abs(rows - a).sum())
                if last:
                    violations.append(err)
                if err < tol:
                    break
    if err > STALL_TOLERANCE:
        raise SinkhornError(
            f"Sinkhorn stalled with marginal violation {err:.3g} at epsilon={epsilon}; "
            f"enable epsilon_scaling or try epsilon >= {_suggest_epsilon(cost):.3g}"
        )
    plan = _plan_from_potentials(cost, f, g, epsilon)
    if not np.all(plan.sum(axis=1) > 0):
        raise SinkhornError(f"transport kernel underflow; try epsilon >= {_suggest_epsilon(cost):.3g}")
    out = TransportPlan(plan, float((plan * cost.c).sum()))
    if log:
        return out, out.cost, {"f": f, "g": g, "marginal_violation": violations}
    return out, out.cost


@dataclass(frozen=True)
class BarycenterConfig:
    epsilon: float = 0.5
    sinkhorn_iters: int = 10
    outer_iters: int = 50
    momentum: float = 0.5
    weights: tuple | None = None  # None means uniform

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sinkhorn_iters < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to one")


def _resolve_weights(weights, k: int) -> np.ndarray:
    if weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector with one entry per measure")
    return w


def _normalize_log(log_q):
    m = log_q.max()
    return log_q - (m + np.log(np.exp(log_q - m).sum()))


def entropic_barycenter(measures, cost: CostMatrix, config: BarycenterConfig = BarycenterConfig(),
                        weights=None, log: bool = False, track_cost: bool = False):
    """Fixed-support entropic W2 barycenter by iterative Bregman projections.

    Each outer step runs ``sinkhorn_iters`` log-domain projection sweeps:
    scale every plan to its input measure, take the weighted geometric mean
    of the plans' second marginals as the new barycenter, and rescale the
    plans onto it. The step's result is blended with the previous outer
    iterate in log space (``momentum``) and renormalized.

    ``weights`` overrides ``config.weights``. Returns the barycenter, and a
    diagnostics dict when ``log=True``.
    """
    measures = np.atleast_2d(np.asarray(measures, dtype=float))
    k, n = measures.shape
    if n != cost.n:
        raise ValueError("measures must live on the cost matrix support")
    alpha = _resolve_weights(config.weights if weights is None else weights, k)
    eps = config.epsilon
    log_p = np.log(np.array([floor_mass(check_simplex(p)) for p in measures]))
    log_q = np.full(n, -np.log(n))
    f = np.zeros((k, n))
    g = np.zeros((k, n))
    pushed = np.zeros((k, n))
    trace = {"marginal_violation": [], "objective": []}
    for _ in range(config.outer_iters):
        log_b = log_q
        for _ in range(config.sinkhorn_iters):
            for i in range(k):
                f[i] = eps * (log_p[i] - lse_rows(cost.c, g[i], eps))
                pushed[i] = lse_cols(cost.c, f[i], eps)
            log_b = alpha @ pushed
            g = eps * (log_b[None, :] - pushed)
        log_q = _normalize_log(config.momentum * log_q + (1.0 - config.momentum) * _normalize_log(log_b))
        g = eps * (log_q[None, :] - pushed)
        if not np.all(np.isfinite(log_q)):
            raise SinkhornError(
                f"barycenter iterate became non-finite at epsilon={eps}; "
                f"try epsilon >= {_suggest_epsilon(cost):.3g}"
            )
        if log:
            # first-marginal violation of each plan after rescaling onto log_q
            rows = np.exp(f / eps + np.array([lse_rows(cost.c, g[i], eps) for i in range(k)]))
            trace["marginal_violation"].append(float(np.abs(rows - np.exp(log_p)).sum(axis=1).max()))
            if track_cost:
                costs = [(_plan_from_potentials(cost, f[i], g[i], eps) * cost.c).sum() for i in range(k)]
                trace["objective"].append(float(alpha @ np.asarray(costs)))
    q = np.exp(log_q)
    q /= q.sum()
    if log:
        return q, trace
    return q


def w2_weighted_objective(candidate, measures, weights, cost: CostMatrix, exact: bool = True,
                          epsilon: float = 0.02) -> float:
    """sum_i weights[i] * W2^2(candidate, measures[i])."""
    measures = np.atleast_2d(np.asarray(measures, dtype=float))
    alpha = _resolve_weights(weights, measures.shape[0])
    if exact and cost.n <= EXACT_MAX_N:
        vals = [exact_w2(candidate, m, cost)[0].cost for m in measures]
    else:
        vals = [sinkhorn_w2(candidate, m, cost, epsilon)[1] for m in measures]
    return float(alpha @ np.asarray(vals))
