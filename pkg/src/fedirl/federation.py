"""Experiment orchestration: heterogeneous clients, local IRL, one aggregation step."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .fusion import ProbeSet, ServerResult, server_aggregate
from .gridworld import (
    GridEnv,
    GridError,
    GridSpec,
    MAX_SLIP,
    expert_policy,
    make_env,
    reachable_from_goal,
    sample_demonstrations,
    shared_lattice,
    true_reward,
)
from .irl import IrlConfig, IrlResult, run_maxent_irl
from .ot import BarycenterConfig

LAYOUT_ATTEMPTS = 100
OBSTACLE_DENSITY = 0.12

# independent random streams, keyed off the master seed
STREAM_FLEET, STREAM_PROBE, STREAM_HELDOUT, STREAM_WEAK, STREAM_DEMOS = range(5)


@dataclass(frozen=True)
class FleetConfig:
    num_clients: int = 3
    width: int = 5
    height: int = 5
    obstacle_count: int | None = None  # None: round(OBSTACLE_DENSITY * cells)
    goal: tuple | None = None  # None: top-right corner
    max_slip: float = MAX_SLIP
    gamma: float = 0.9
    horizon: int = 30
    demos_per_client: int = 50
    weak_fraction: float = 0.0
    weak_scale: tuple = (0.1, 0.5)
    weights: str = "uniform"  # "uniform" | "by_demo_count"
    theta_star: tuple = (1.0, 0.5, 0.0)
    master_seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        weak = self.weak_fraction * self.num_clients
        if not 0.0 <= self.weak_fraction <= 1.0 or abs(weak - round(weak)) > 1e-9:
            raise ValueError(
                f"weak_fraction {self.weak_fraction} times {self.num_clients} clients is not a whole count"
            )
        lo, hi = self.weak_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("weak_scale must satisfy 0 < low <= high <= 1")
        if self.weights not in ("uniform", "by_demo_count"):
            raise ValueError(f"unknown weight scheme {self.weights!r}")
        if not 0.0 <= self.max_slip <= MAX_SLIP:
            raise ValueError(f"max_slip must lie in [0, {MAX_SLIP}]")
        if self.demos_per_client < 1:
            raise ValueError("demos_per_client must be >= 1")

    @property
    def goal_cell(self) -> tuple:
        return tuple(self.goal) if self.goal is not None else (self.width - 1, self.height - 1)

    @property
    def n_obstacles(self) -> int:
        if self.obstacle_count is not None:
            return self.obstacle_count
        return int(round(OBSTACLE_DENSITY * self.width * self.height))

    @property
    def n_weak(self) -> int:
        return int(round(self.weak_fraction * self.num_clients))

    def replace(self, **changes) -> "FleetConfig":
        return FleetConfig(**{**asdict(self), **changes})


def stream(master_seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, kind, index]))


def random_layout(config: FleetConfig, rng: np.random.Generator, slip: float | None = None) -> GridSpec:
    """Sample obstacle cells uniformly until every free cell can reach the goal."""
    goal = config.goal_cell
    cells = [(x, y) for y in range(config.height) for x in range(config.width) if (x, y) != goal]
    if config.n_obstacles > len(cells) - 1:
        raise GridError(f"{config.n_obstacles} obstacles do not fit a {config.width}x{config.height} grid")
    if slip is None:
        slip = float(rng.uniform(0.0, config.max_slip))
    for _ in range(LAYOUT_ATTEMPTS):
        picks = rng.choice(len(cells), size=config.n_obstacles, replace=False)
        spec = GridSpec(config.width, config.height, goal, frozenset(cells[i] for i in picks), slip,
                        config.gamma, config.horizon)
        free = config.width * config.height - config.n_obstacles
        if len(reachable_from_goal(spec)) == free:
            return spec
    raise GridError(f"no connected layout found in {LAYOUT_ATTEMPTS} attempts")


def build_fleet(config: FleetConfig) -> list[GridEnv]:
    """K client MDPs on one shared lattice, reproducible from the master seed."""
    lattice = shared_lattice(config.width, config.height)
    return [
        make_env(random_layout(config, stream(config.master_seed, STREAM_FLEET, i)), lattice)
        for i in range(config.num_clients)
    ]


def build_heldout(config: FleetConfig, count: int) -> list[GridEnv]:
    """Unseen environments from the same generator, on seeds disjoint from the fleet's."""
    lattice = shared_lattice(config.width, config.height)
    return [
        make_env(random_layout(config, stream(config.master_seed, STREAM_HELDOUT, i)), lattice)
        for i in range(count)
    ]


def build_probe(config: FleetConfig) -> ProbeSet:
    spec = random_layout(config, stream(config.master_seed, STREAM_PROBE), slip=0.0)
    return ProbeSet.from_spec(spec)


@dataclass
class ClientRecord:
    spec: GridSpec
    demos: int
    irl_result: IrlResult
    epsilon: float
    is_weak: bool
    iterations: int

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"client error must be finite and nonnegative, got {self.epsilon}")

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "demos": self.demos,
            "theta": [float(v) for v in self.irl_result.theta_hat],
            "epsilon": float(self.epsilon),
            "is_weak": self.is_weak,
            "iterations": self.iterations,
        }


def weight_scheme(demo_counts, scheme: str = "uniform") -> np.ndarray:
    counts = np.asarray(demo_counts, dtype=float)
    if counts.size < 1:
        raise ValueError("need at least one client")
    if scheme == "uniform":
        return np.full(counts.size, 1.0 / counts.size)
    if scheme == "by_demo_count":
        return counts / counts.sum()
    raise ValueError(f"unknown weight scheme {scheme!r}")


def weak_budgets(config: FleetConfig, irl_config: IrlConfig) -> list[tuple[bool, int]]:
    """(is_weak, iteration budget) per client; weak budgets shrink by U(weak_scale)."""
    rng = stream(config.master_seed, STREAM_WEAK)
    weak = set(rng.choice(config.num_clients, size=config.n_weak, replace=False).tolist())
    out = []
    for i in range(config.num_clients):
        factor = rng.uniform(*config.weak_scale)  # drawn for every client to keep streams aligned
        if i in weak:
            out.append((True, max(1, int(np.floor(factor * irl_config.iterations)))))
        else:
            out.append((False, irl_config.iterations))
    return out


def train_client(env: GridEnv, theta_star, demos: int, irl_config: IrlConfig, seed) -> IrlResult:
    """Client-local work: expert demonstrations under the client's own dynamics, then MaxEnt IRL."""
    policy = expert_policy(env, true_reward(env.features, theta_star))
    trajectories = sample_demonstrations(env, policy, demos, seed)
    return run_maxent_irl(env, trajectories, irl_config)


def worker_count(default: int = 1) -> int:
    value = os.environ.get("FEDIRL_THREADS")
    if value is None:
        return default
    try:
        n = int(value)
    except ValueError as exc:
        raise ValueError(f"FEDIRL_THREADS must be an integer, got {value!r}") from exc
    if n < 1:
        raise ValueError("FEDIRL_THREADS must be >= 1")
    return n


@dataclass
class RoundResult:
    records: list
    server: ServerResult
    probe: ProbeSet
    uploads: list = field(default_factory=list)

    @property
    def theta_bary(self) -> np.ndarray:
        return self.server.fused.theta

    @property
    def theta_mean(self) -> np.ndarray:
        return self.server.theta_mean

    def weighted_error(self) -> float:
        return float(self.server.weights @ np.array([r.epsilon for r in self.records]))


def run_round(fleet: list[GridEnv], config: FleetConfig, irl_config: IrlConfig,
              bary_config: BarycenterConfig, probe: ProbeSet | None = None, sigma_margin: float = 1.0,
              threads: int | None = None) -> RoundResult:
    """Train every client, upload serialized parameters, fuse both ways."""
    probe = build_probe(config) if probe is None else probe
    budgets = weak_budgets(config, irl_config)
    theta_star = np.asarray(config.theta_star, dtype=float)

    def job(i):
        cfg = IrlConfig(**{**asdict(irl_config), "iterations": budgets[i][1]})
        seed = np.random.SeedSequence([config.master_seed, STREAM_DEMOS, i])
        return train_client(fleet[i], theta_star, config.demos_per_client, cfg, seed)

    threads = worker_count() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(len(fleet))))
    else:
        results = [job(i) for i in range(len(fleet))]

    r_star = probe.reward(theta_star)
    records = [
        ClientRecord(env.spec, config.demos_per_client, res,
                     float(np.abs(probe.reward(res.theta_hat) - r_star).sum()), weak, iters)
        for env, res, (weak, iters) in zip(fleet, results, budgets)
    ]
    uploads = [res.to_json() for res in results]
    alpha = weight_scheme([r.demos for r in records], config.weights)
    server = server_aggregate(uploads, probe, alpha, bary_config, sigma_margin)
    return RoundResult(records, server, probe, uploads)
