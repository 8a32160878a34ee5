"""Client-side maximum-entropy IRL with linear rewards.

The likelihood model is episodic: an episode ends when the agent enters a
terminal cell (goal or obstacle) or after ``horizon`` steps, which is how
demonstrations are recorded. Terminal successors therefore contribute no
continuation value, and the log-partition is the soft value of the start
distribution. Its gradient is the model's discounted feature expectation,
so the analytic gradient of the objective is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gridworld import ACTIONS, ConvergenceError, FeatureMatrix, GridEnv, Trajectory, vi_iteration_cap


@dataclass(frozen=True)
class IrlConfig:
    learning_rate: float = 5e-2
    l2_lambda: float = 1e-3
    iterations: int = 200
    soft_vi_tolerance: float = 1e-8
    seed: int = 0
    # "finite": time-indexed soft VI over the env horizon; "infinite": stationary
    horizon_mode: str = "finite"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.horizon_mode not in ("finite", "infinite"):
            raise ValueError(f"unknown horizon_mode {self.horizon_mode!r}")


@dataclass(frozen=True)
class FeatureExpectation:
    mu: np.ndarray
    source: str  # "empirical" | "policy"


@dataclass
class IrlResult:
    theta_hat: np.ndarray
    objective_trace: list = field(default_factory=list)
    grad_norm_trace: list = field(default_factory=list)
    # local reward on the client's own features; never uploaded
    reward_hat: np.ndarray | None = None

    def to_json(self) -> str:
        """Upload payload: parameters and optimizer traces only."""
        return json.dumps(
            {
                "theta": [float(v) for v in self.theta_hat],
                "objective_trace": [float(v) for v in self.objective_trace],
                "grad_norm_trace": [float(v) for v in self.grad_norm_trace],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "IrlResult":
        data = json.loads(text)
        return cls(
            theta_hat=np.asarray(data["theta"], dtype=float),
            objective_trace=list(data["objective_trace"]),
            grad_norm_trace=list(data["grad_norm_trace"]),
        )


def empirical_feature_expectation(demos: list[Trajectory], features: FeatureMatrix, gamma: float,
                                  n_actions: int = len(ACTIONS)) -> FeatureExpectation:
    """Average over demonstrations of sum_t gamma^t phi(s_t, a_t)."""
    if not demos:
        raise ValueError("empirical feature expectation needs at least one demonstration")
    total = np.zeros(features.d)
    for traj in demos:
        idx = traj.flat_indices(n_actions)
        total += (gamma ** np.arange(len(idx))) @ features.phi[idx]
    return FeatureExpectation(total / len(demos), "empirical")


def _exit_kernel(kernel: np.ndarray, terminal: np.ndarray | None) -> np.ndarray:
    if terminal is None:
        return kernel
    return kernel * ~np.asarray(terminal)[None, :]


def soft_value_iteration(kernel: np.ndarray, reward: np.ndarray, gamma: float, tolerance: float = 1e-8,
                         terminal: np.ndarray | None = None):
    """Stationary soft Bellman fixed point.

    Returns ``(policy, q, v)`` with ``policy`` of shape (n_states, n_actions).
    ``terminal`` marks states whose entry ends the episode (zero continuation).
    """
    if not np.all(np.isfinite(reward)):
        raise ValueError("reward has non-finite entries")
    n_states = kernel.shape[1]
    n_actions = kernel.shape[0] // n_states
    p = _exit_kernel(kernel, terminal)
    v = np.zeros(n_states)
    if gamma == 0:
        q = reward.reshape(n_states, n_actions)
        v = logsumexp(q, axis=1)
        return np.exp(q - v[:, None]), q, v
    for _ in range(vi_iteration_cap(gamma, tolerance)):
        q = (reward + gamma * p @ v).reshape(n_states, n_actions)
        v_new = logsumexp(q, axis=1)
        delta = np.abs(v_new - v).max()
        v = v_new
        if delta < tolerance:
            q = (reward + gamma * p @ v).reshape(n_states, n_actions)
            return np.exp(q - v[:, None]), q, v
    raise ConvergenceError(f"soft value iteration exceeded its iteration cap (gamma={gamma})")


def finite_soft_value_iteration(kernel: np.ndarray, reward: np.ndarray, gamma: float, steps: int,
                                terminal: np.ndarray | None = None):
    """Backward soft recursion over ``steps`` decisions.

    Returns ``(policies, v0)`` where ``policies[t]`` is the step-t policy.
    """
    n_states = kernel.shape[1]
    n_actions = kernel.shape[0] // n_states
    p = _exit_kernel(kernel, terminal)
    v = np.zeros(n_states)
    policies = np.empty((steps, n_states, n_actions))
    for t in range(steps - 1, -1, -1):
        q = (reward + gamma * p @ v).reshape(n_states, n_actions)
        v = logsumexp(q, axis=1)
        policies[t] = np.exp(q - v[:, None])
    return policies, v


def _state_action_step(kernel, pi, d_state):
    d_sa = d_state[:, None] * pi
    return d_sa, d_sa.reshape(-1) @ kernel


def policy_feature_expectation(kernel: np.ndarray, policy: np.ndarray, features: FeatureMatrix, gamma: float,
                               start: np.ndarray, horizon: int | None,
                               terminal: np.ndarray | None = None) -> FeatureExpectation:
    """Discounted feature counts of ``policy`` from ``start``.

    ``policy`` is (n_states, n_actions) or time-indexed (T, n_states, n_actions).
    With an integer ``horizon`` the sum runs over t = 0..horizon; ``None``
    solves the infinite-horizon occupancy system.
    """
    p = _exit_kernel(kernel, terminal)
    phi = features.phi
    if horizon is None:
        if policy.ndim != 2:
            raise ValueError("infinite horizon needs a stationary policy")
        n_states, n_actions = policy.shape
        p_pi = (policy.reshape(-1)[:, None] * p).reshape(n_states, n_actions, n_states).sum(axis=1)
        d_state = np.linalg.solve(np.eye(n_states) - gamma * p_pi.T, start)
        return FeatureExpectation((d_state[:, None] * policy).reshape(-1) @ phi, "policy")
    mu = np.zeros(phi.shape[1])
    d_state = np.asarray(start, dtype=float)
    for t in range(horizon + 1):
        pi = policy[t] if policy.ndim == 3 else policy
        d_sa, d_state = _state_action_step(p, pi, d_state)
        mu += gamma**t * (d_sa.reshape(-1) @ phi)
    return FeatureExpectation(mu, "policy")


def maxent_gradient(mu_expert, mu_policy, theta, l2_lambda: float) -> np.ndarray:
    mu_expert, mu_policy, theta = (np.asarray(v, dtype=float) for v in (mu_expert, mu_policy, theta))
    if not (mu_expert.shape == mu_policy.shape == theta.shape):
        raise ValueError(f"shape mismatch: {mu_expert.shape}, {mu_policy.shape}, {theta.shape}")
    return mu_expert - mu_policy - l2_lambda * theta


class MaxEntProblem:
    """Objective and gradient of one client's regularized MaxEnt likelihood."""

    def __init__(self, env: GridEnv, mu_expert: np.ndarray, config: IrlConfig):
        self.env = env
        self.mu_expert = np.asarray(mu_expert, dtype=float)
        self.config = config
        self.start = env.start_distribution()

    def _solve(self, theta):
        env, cfg = self.env, self.config
        reward = env.features.phi @ theta
        if cfg.horizon_mode == "finite":
            policies, v0 = finite_soft_value_iteration(env.kernel, reward, env.gamma, env.horizon, env.terminal)
            mu = policy_feature_expectation(env.kernel, policies, env.features, env.gamma, self.start,
                                            env.horizon - 1, env.terminal)
        else:
            policy, _, v0 = soft_value_iteration(env.kernel, reward, env.gamma, cfg.soft_vi_tolerance, env.terminal)
            mu = policy_feature_expectation(env.kernel, policy, env.features, env.gamma, self.start,
                                            None, env.terminal)
        return float(self.start @ v0), mu.mu

    def objective(self, theta) -> float:
        log_z, _ = self._solve(theta)
        return float(theta @ self.mu_expert - log_z - 0.5 * self.config.l2_lambda * theta @ theta)

    def value_and_grad(self, theta):
        log_z, mu_policy = self._solve(theta)
        value = float(theta @ self.mu_expert - log_z - 0.5 * self.config.l2_lambda * theta @ theta)
        return value, maxent_gradient(self.mu_expert, mu_policy, theta, self.config.l2_lambda)


def run_maxent_irl(env: GridEnv, demos: list[Trajectory], config: IrlConfig) -> IrlResult:
    """Fixed-step gradient ascent from theta = 0 for exactly ``config.iterations`` steps."""
    mu_expert = empirical_feature_expectation(demos, env.features, env.gamma).mu
    problem = MaxEntProblem(env, mu_expert, config)
    theta = np.zeros(env.features.d)
    objectives, grad_norms = [], []
    for it in range(config.iterations):
        value, grad = problem.value_and_grad(theta)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise FloatingPointError(
                f"MaxEnt objective became non-finite at iteration {it} "
                f"(learning_rate={config.learning_rate} is likely too large)"
            )
        objectives.append(value)
        grad_norms.append(float(np.linalg.norm(grad)))
        theta = theta + config.learning_rate * grad
    return IrlResult(theta, objectives, grad_norms, env.features.phi @ theta)
