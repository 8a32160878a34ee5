"""Oracle-access checks of the fusion stability and policy-suboptimality bounds.

Every inequality is evaluated on concrete instances with exact quantities:
LP transport costs and linear-solve occupancy measures. The only
approximation is the entropic barycenter itself, which each check absorbs
with an explicit, measured slack.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, hstack, vstack

from .fusion import back_map, choose_sigma, recover_parameters, shift_normalize
from .gridworld import FeatureMatrix, GridEnv, optimal_policy, policy_matrix
from .ot import BarycenterConfig, CostMatrix, cost_from_points, entropic_barycenter, exact_w2

SHARP_EPSILON = 0.02
GAP_TOL = 1e-9


@dataclass
class Inequality:
    name: str
    lhs: float
    rhs: float
    slack: float = 0.0

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs

    @property
    def holds(self) -> bool:
        return bool(self.margin >= -1e-9 * max(1.0, abs(self.rhs)))

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "margin": self.margin, "holds": self.holds}


@dataclass
class BoundInstance:
    """Everything the stability bounds depend on, for one fleet."""

    rewards: np.ndarray  # (K, n) client rewards on the shared lattice
    r_star: np.ndarray
    theta_star: np.ndarray
    alpha: np.ndarray
    features: FeatureMatrix
    cost: CostMatrix
    config: BarycenterConfig = field(default_factory=BarycenterConfig)
    sigma_margin: float = 1.0

    def __post_init__(self):
        self.rewards = np.atleast_2d(np.asarray(self.rewards, dtype=float))
        self.r_star = np.asarray(self.r_star, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.sigma = choose_sigma([*self.rewards, self.r_star], self.sigma_margin)
        self.measures, zs = zip(*(shift_normalize(r, self.sigma) for r in self.rewards))
        self.measures = np.vstack(self.measures)
        self.z_values = np.asarray(zs)
        self.p_star, self.z_star = shift_normalize(self.r_star, self.sigma)
        self.z_min = float(min(self.z_values.min(), self.z_star))
        self.eps = np.abs(self.rewards - self.r_star).sum(axis=1)
        if not (np.all(np.isfinite(self.eps)) and np.isfinite(self.z_min)):
            raise ValueError("bound instance has non-finite entries")

    @property
    def weighted_error(self) -> float:
        return float(self.alpha @ self.eps)

    @property
    def kappa(self) -> float:
        return self.features.kappa

    def barycenter(self, epsilon: float | None = None) -> np.ndarray:
        cfg = self.config if epsilon is None else BarycenterConfig(
            epsilon, self.config.sinkhorn_iters, self.config.outer_iters, self.config.momentum)
        return entropic_barycenter(self.measures, self.cost, cfg, weights=self.alpha)

    def summary(self) -> dict:
        return {
            "eps": self.eps.tolist(),
            "alpha": self.alpha.tolist(),
            "D": self.cost.diameter,
            "delta": self.cost.min_spacing,
            "Z_star": float(self.z_star),
            "Z_min": self.z_min,
            "kappa": float(self.kappa),
            "sigma": float(self.sigma),
        }


def stability_bounds(inst: BoundInstance) -> tuple[float, float, float]:
    """Right-hand sides for the measure, reward and parameter errors (no slack)."""
    root = np.sqrt(inst.weighted_error)
    d, delta = inst.cost.diameter, inst.cost.min_spacing
    w2 = 2.0 * d / np.sqrt(inst.z_min) * root
    reward = 2.0 * np.sqrt(2.0) * d * inst.z_star / (delta * np.sqrt(inst.z_min)) * root
    return w2, reward, inst.kappa * reward


@dataclass
class FusionCheck:
    inequalities: list
    instance: dict
    entropic_gap: float
    p_bar: np.ndarray
    r_bar: np.ndarray
    theta_hat: np.ndarray

    @property
    def passed(self) -> bool:
        return all(q.holds for q in self.inequalities)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "entropic_gap": self.entropic_gap, "instance": self.instance,
                "inequalities": [q.to_dict() for q in self.inequalities]}


def check_fusion_stability(inst: BoundInstance) -> FusionCheck:
    """Measure, reward and parameter stability of the fused reward.

    The barycenter is computed at the configured epsilon. Its distance from
    the sharp (epsilon=0.02) barycenter in l1 is the entropic slack, carried
    into each inequality's units: W2 through the TV bound, rewards through
    the normalizer, parameters through kappa.
    """
    p_bar = inst.barycenter()
    gap = float(np.abs(p_bar - inst.barycenter(SHARP_EPSILON)).sum())
    w2 = exact_w2(p_bar, inst.p_star, inst.cost)[1]
    r_bar = back_map(p_bar, inst.z_star, inst.sigma)
    theta_hat = recover_parameters(r_bar, inst.features)
    rhs_w2, rhs_r, rhs_theta = stability_bounds(inst)
    slack_r = inst.z_star * gap
    ineqs = [
        Inequality("w2_measure", w2, rhs_w2, inst.cost.diameter * np.sqrt(gap / 2.0)),
        Inequality("reward_l2", float(np.linalg.norm(r_bar - inst.r_star)), rhs_r, slack_r),
        Inequality("theta_l2", float(np.linalg.norm(theta_hat - inst.theta_star)), rhs_theta,
                   inst.kappa * slack_r),
    ]
    # the production pipeline back-maps with the weighted client normalizers instead of Z(r*)
    plug_in = back_map(p_bar, float(inst.alpha @ inst.z_values), inst.sigma)
    summary = {**inst.summary(), "oracle_reward_l2": ineqs[1].lhs,
               "plug_in_reward_l2": float(np.linalg.norm(plug_in - inst.r_star))}
    return FusionCheck(ineqs, summary, gap, p_bar, r_bar, theta_hat)


def occupancy(kernel: np.ndarray, policy: np.ndarray, gamma: float, start: np.ndarray) -> np.ndarray:
    """Normalized discounted state-action occupancy (sums to one).

    ``policy`` is deterministic (n_states,) or stochastic (n_states, n_actions).
    """
    n_states = kernel.shape[1]
    n_actions = kernel.shape[0] // n_states
    policy = np.asarray(policy)
    pi = policy_matrix(policy, n_actions) if policy.ndim == 1 else np.asarray(policy, dtype=float)
    p_pi = (pi.reshape(-1)[:, None] * kernel).reshape(n_states, n_actions, n_states).sum(axis=1)
    if not 0.0 <= gamma < 1.0:
        raise np.linalg.LinAlgError(f"occupancy system is singular for gamma={gamma}")
    system = np.eye(n_states) - gamma * p_pi.T
    d = np.linalg.solve(system, np.asarray(start, dtype=float))
    return ((1.0 - gamma) * d[:, None] * pi).reshape(-1)


def discounted_return(rho: np.ndarray, reward: np.ndarray, gamma: float) -> float:
    return float(rho @ reward) / (1.0 - gamma)


@dataclass
class PolicyCheck:
    per_client: list  # list of lists of Inequality
    gaps: list

    @property
    def passed(self) -> bool:
        return all(q.holds for qs in self.per_client for q in qs)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "gaps": self.gaps,
                "clients": [[q.to_dict() for q in qs] for qs in self.per_client]}


def return_gap(env: GridEnv, r: np.ndarray, s: np.ndarray) -> float:
    """J(pi_r; r) - J(pi_s; r) under the env's dynamics and start distribution."""
    start = env.start_distribution()
    pi_r = optimal_policy(env.kernel, r, env.gamma)
    pi_s = optimal_policy(env.kernel, s, env.gamma)
    j_r = discounted_return(occupancy(env.kernel, pi_r, env.gamma, start), r, env.gamma)
    j_s = discounted_return(occupancy(env.kernel, pi_s, env.gamma, start), r, env.gamma)
    return j_r - j_s


def check_policy_gap(inst: BoundInstance, clients: list[GridEnv], fusion: FusionCheck | None = None) -> PolicyCheck:
    """Suboptimality of the fused reward's greedy policy on each client.

    The end-to-end bound reuses the reward-stability right-hand side and
    its entropic slack.
    """
    fusion = check_fusion_stability(inst) if fusion is None else fusion
    r_bar, r_star = fusion.r_bar, inst.r_star
    _, rhs_r, _ = stability_bounds(inst)
    slack_r = inst.z_star * fusion.entropic_gap
    per_client, gaps = [], []
    for env in clients:
        scale = 2.0 / (1.0 - env.gamma)
        gap = return_gap(env, r_star, r_bar)
        gaps.append(gap)
        per_client.append([
            Inequality("gap_nonnegative", -gap, GAP_TOL),
            Inequality("gap_linf", gap, scale * float(np.abs(r_star - r_bar).max())),
            Inequality("gap_l2", gap, scale * float(np.linalg.norm(r_star - r_bar))),
            Inequality("gap_end_to_end", gap, scale * rhs_r, scale * slack_r),
        ])
    return PolicyCheck(per_client, gaps)


# proof-step checks

def lipschitz_check(r, s, sigma: float) -> Inequality:
    """Shift-normalize is (2 / Z_min)-Lipschitz in l1."""
    p, zr = shift_normalize(r, sigma)
    q, zs = shift_normalize(s, sigma)
    diff = float(np.abs(np.asarray(r) - np.asarray(s)).sum())
    return Inequality("lipschitz", float(np.abs(p - q).sum()), 2.0 / min(zr, zs) * diff)


def tv_w2_check(mu, nu, cost: CostMatrix) -> Inequality:
    w2 = exact_w2(mu, nu, cost)[1]
    return Inequality("tv_w2", w2**2, cost.diameter**2 / 2.0 * float(np.abs(mu - nu).sum()))


def l2_spacing_check(mu, nu, cost: CostMatrix) -> Inequality:
    w2 = exact_w2(mu, nu, cost)[1]
    return Inequality("l2_spacing", float(np.linalg.norm(mu - nu)), np.sqrt(2.0) * w2 / cost.min_spacing)


def exact_barycenter(measures, cost: CostMatrix, weights) -> tuple[np.ndarray, float]:
    """Fixed-support W2 barycenter by one joint LP over K transport plans.

    Returns (barycenter, objective). Small supports only.
    """
    measures = np.atleast_2d(np.asarray(measures, dtype=float))
    k, n = measures.shape
    alpha = np.asarray(weights, dtype=float)
    idx = np.arange(n * n)
    # plan block i: rows sum to measures[i], columns sum to the barycenter q
    row_op = coo_matrix((np.ones(n * n), (idx // n, idx)), shape=(n, n * n))
    col_op = coo_matrix((np.ones(n * n), (idx % n, idx)), shape=(n, n * n))
    blocks_eq, b_eq = [], []
    for i in range(k):
        left = [coo_matrix((n, n * n))] * k
        left[i] = row_op
        blocks_eq.append(hstack(left + [coo_matrix((n, n))]))
        b_eq.append(measures[i])
        left = [coo_matrix((n, n * n))] * k
        left[i] = col_op
        blocks_eq.append(hstack(left + [-coo_matrix(np.eye(n))]))
        b_eq.append(np.zeros(n))
    c = np.concatenate([a * cost.c.ravel() for a in alpha] + [np.zeros(n)])
    res = linprog(c, A_eq=vstack(blocks_eq).tocsr(), b_eq=np.concatenate(b_eq), bounds=(0, None),
                  method="highs")
    if res.status != 0:
        raise ValueError(f"barycenter LP failed: {res.message}")
    q = np.maximum(res.x[-n:], 0.0)
    return q / q.sum(), float(res.fun)


def contraction_check(measures, p_star, cost: CostMatrix, weights, config: BarycenterConfig) -> Inequality:
    """W2^2(p_bar, p*) <= 4 sum_i a_i W2^2(p_i, p*) for the entropic barycenter.

    The inequality assumes an exact minimizer; the slack is twice the
    entropic barycenter's excess objective over the exact LP barycenter.
    """
    alpha = np.asarray(weights, dtype=float)
    p_bar = entropic_barycenter(measures, cost, config, weights=alpha)
    _, best = exact_barycenter(measures, cost, alpha)
    achieved = float(alpha @ [exact_w2(p_bar, m, cost)[0].cost for m in measures])
    rhs = 4.0 * float(alpha @ [exact_w2(m, p_star, cost)[0].cost for m in measures])
    lhs = exact_w2(p_bar, p_star, cost)[0].cost
    return Inequality("contraction", lhs, rhs, 2.0 * max(achieved - best, 0.0))


def _random_measure(rng, n):
    return rng.dirichlet(np.full(n, 0.5))


def proof_step_campaign(trials: int, seed: int = 0,
                        config: BarycenterConfig = BarycenterConfig(epsilon=SHARP_EPSILON, outer_iters=100)) -> dict:
    """Randomized checks of the four intermediate inequalities."""
    rng = np.random.default_rng(seed)
    out = {"lipschitz": [], "tv_w2": [], "contraction": [], "l2_spacing": []}
    for _ in range(trials):
        n = int(rng.integers(4, 89))
        r = rng.normal(size=n) * rng.uniform(0.1, 5.0)
        s = r + rng.normal(size=n) * rng.uniform(1e-3, 2.0)
        sigma = choose_sigma([r, s], rng.uniform(0.1, 2.0))
        out["lipschitz"].append(lipschitz_check(r, s, sigma))

        m = int(rng.integers(3, 11))
        cost = cost_from_points(rng.uniform(0.0, 3.0, size=(m, 2)))
        mu, nu = _random_measure(rng, m), _random_measure(rng, m)
        out["tv_w2"].append(tv_w2_check(mu, nu, cost))
        out["l2_spacing"].append(l2_spacing_check(mu, nu, cost))

        k = int(rng.integers(2, 5))
        measures = np.array([_random_measure(rng, m) for _ in range(k)])
        alpha = rng.dirichlet(np.ones(k))
        out["contraction"].append(contraction_check(measures, _random_measure(rng, m), cost, alpha, config))
    return out


def summarize(results: dict) -> dict:
    return {name: {"passed": sum(q.holds for q in qs), "trials": len(qs),
                   "worst_margin": min((q.margin for q in qs), default=0.0)}
            for name, qs in results.items()}


def dump(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        return asdict(o)
    return json.dumps(obj, sort_keys=True, default=default, indent=2)


def fleet_instance(config, irl_config, bary_config: BarycenterConfig = BarycenterConfig(),
                   sigma_margin: float = 1.0):
    """Train a fleet and package its uploads as a bound instance on the probe lattice."""
    from .federation import build_fleet, run_round

    fleet = build_fleet(config)
    rnd = run_round(fleet, config, irl_config, bary_config, sigma_margin=sigma_margin)
    theta_star = np.asarray(config.theta_star, dtype=float)
    inst = BoundInstance(np.vstack(rnd.server.client_rewards), rnd.probe.reward(theta_star), theta_star,
                         rnd.server.weights, rnd.probe.features, rnd.probe.cost, bary_config, sigma_margin)
    return inst, fleet, rnd


def fleet_campaign(trials: int, seed: int = 0, base=None, irl_config=None,
                     bary_config: BarycenterConfig = BarycenterConfig()) -> list[dict]:
    """Randomized fleets (client count, IRL budget, layouts) checked against every stability and suboptimality bound."""
    from .federation import FleetConfig
    from .irl import IrlConfig

    base = FleetConfig() if base is None else base
    irl_config = IrlConfig() if irl_config is None else irl_config
    rng = np.random.default_rng(seed)
    out = []
    for trial in range(trials):
        config = base.replace(num_clients=int(rng.integers(2, 6)), master_seed=int(rng.integers(2**31)))
        irl = IrlConfig(**{**asdict(irl_config), "iterations": int(rng.integers(5, irl_config.iterations + 1))})
        inst, fleet, _ = fleet_instance(config, irl, bary_config)
        fusion = check_fusion_stability(inst)
        policy = check_policy_gap(inst, fleet, fusion)
        out.append({"trial": trial, "master_seed": config.master_seed, "clients": config.num_clients,
                    "iterations": irl.iterations, "fusion_stability": fusion.to_dict(), "policy_gap": policy.to_dict()})
    return out
