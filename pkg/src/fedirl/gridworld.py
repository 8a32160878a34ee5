"""Stochastic grid-world clients on a shared state-action lattice.

Cells are ``(x, y)`` pairs with ``0 <= x < width`` and ``0 <= y < height``.
States are ordered row-major (``y`` major, ``x`` minor) and actions follow
:data:`ACTIONS`, so the flat lattice index of ``(state, action)`` is
``state * 4 + action`` for every client built on the same lattice.

Goal and obstacle cells are absorbing in the control MDP: an agent that
moves into an obstacle stays there forever (a crash) and an agent that
reaches the goal stays at the goal. Trajectories stop at either event.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ACTIONS = ("up", "down", "left", "right")
MOVES = np.array([(0, 1), (0, -1), (-1, 0), (1, 0)], dtype=int)
# perpendicular directions used by slip, per action index
PERPENDICULAR = ((2, 3), (2, 3), (0, 1), (0, 1))
MAX_SLIP = 0.10

Cell = tuple[int, int]


class GridError(ValueError):
    """Invalid grid specification or degenerate MDP."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    goal: Cell
    obstacles: frozenset = field(default_factory=frozenset)
    slip: float = 0.0
    gamma: float = 0.9
    horizon: int = 30

    def __post_init__(self):
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        object.__setattr__(
            self, "obstacles", frozenset(tuple(int(v) for v in o) for o in self.obstacles)
        )
        if self.width < 1 or self.height < 1:
            raise GridError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        for cell in (self.goal, *self.obstacles):
            if not self.inside(cell):
                raise GridError(f"cell {cell} lies outside the {self.width}x{self.height} grid")
        if self.goal in self.obstacles:
            raise GridError(f"goal {self.goal} is also an obstacle")
        if not 0.0 <= self.slip <= MAX_SLIP:
            raise GridError(f"slip must lie in [0, {MAX_SLIP}], got {self.slip}")
        if not 0.0 < self.gamma < 1.0:
            raise GridError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise GridError(f"horizon must be positive, got {self.horizon}")

    def inside(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    @property
    def diagonal(self) -> float:
        diag = float(np.hypot(self.width - 1, self.height - 1))
        return diag if diag > 0 else 1.0

    def is_terminal(self, cell: Cell) -> bool:
        return cell == self.goal or cell in self.obstacles

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "goal": list(self.goal),
            "obstacles": sorted(list(o) for o in self.obstacles),
            "slip": self.slip,
            "gamma": self.gamma,
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            goal=tuple(data["goal"]),
            obstacles=frozenset(tuple(o) for o in data.get("obstacles", [])),
            slip=float(data.get("slip", 0.0)),
            gamma=float(data.get("gamma", 0.9)),
            horizon=int(data.get("horizon", 30)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StateActionLattice:
    width: int
    height: int
    states: tuple  # ordered cells
    actions: tuple = ACTIONS

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n(self) -> int:
        return self.n_states * self.n_actions

    def state_index(self, cell: Cell) -> int:
        return self._lookup[tuple(cell)]

    def index(self, state: int, action: int) -> int:
        return state * self.n_actions + action

    def unindex(self, x: int) -> tuple[int, int]:
        return divmod(int(x), self.n_actions)

    def cell_of(self, x: int) -> Cell:
        return self.states[x // self.n_actions]

    def cell_coords(self) -> np.ndarray:
        """(n, 2) array of the cell of every lattice point."""
        cells = np.asarray(self.states, dtype=float)
        return np.repeat(cells, self.n_actions, axis=0)

    def action_ids(self) -> np.ndarray:
        return np.tile(np.arange(self.n_actions), self.n_states)

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self._lookup

    @property
    def _lookup(self) -> dict:
        cache = self.__dict__.get("_lookup_cache")
        if cache is None:
            cache = {c: i for i, c in enumerate(self.states)}
            object.__setattr__(self, "_lookup_cache", cache)
        return cache


def _row_major(width: int, height: int, skip: Iterable[Cell] = ()) -> tuple:
    skip = set(skip)
    return tuple((x, y) for y in range(height) for x in range(width) if (x, y) not in skip)


def start_cells(spec: GridSpec) -> list[Cell]:
    return [c for c in _row_major(spec.width, spec.height) if not spec.is_terminal(c)]


def reachable_from_goal(spec: GridSpec) -> set:
    """Cells from which the goal can be reached by moves avoiding obstacles."""
    seen = {spec.goal}
    queue = deque([spec.goal])
    while queue:
        cx, cy = queue.popleft()
        for dx, dy in MOVES:
            nxt = (cx + dx, cy + dy)
            if spec.inside(nxt) and nxt not in spec.obstacles and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def build_lattice(spec: GridSpec) -> StateActionLattice:
    """Lattice over the non-obstacle cells of ``spec``.

    Raises GridError when no start state can reach the goal.
    """
    starts = start_cells(spec)
    if not starts or not reachable_from_goal(spec).intersection(starts):
        raise GridError(f"goal {spec.goal} is unreachable from every start state")
    return StateActionLattice(spec.width, spec.height, _row_major(spec.width, spec.height, spec.obstacles))


def shared_lattice(width: int, height: int) -> StateActionLattice:
    """Lattice over every cell; identical for all clients of one grid size.

    A client's obstacle cells stay on this lattice as absorbing crash states.
    """
    return StateActionLattice(width, height, _row_major(width, height))


def _step_cell(spec: GridSpec, lattice: StateActionLattice, cell: Cell, move) -> Cell:
    nxt = (cell[0] + int(move[0]), cell[1] + int(move[1]))
    if not spec.inside(nxt):
        return cell
    if nxt in spec.obstacles and nxt not in lattice:
        # lattice omits the obstacle: it behaves like a wall
        return cell
    return nxt


def transition_kernel(spec: GridSpec, lattice: StateActionLattice) -> np.ndarray:
    """Row-stochastic matrix of shape (n, n_states): P[x, s'] for x=(s, a)."""
    kernel = np.zeros((lattice.n, lattice.n_states))
    for s, cell in enumerate(lattice.states):
        for a in range(lattice.n_actions):
            x = lattice.index(s, a)
            if spec.is_terminal(cell):
                kernel[x, s] = 1.0
                continue
            outcomes = [(a, 1.0 - spec.slip)]
            if spec.slip > 0:
                outcomes += [(p, spec.slip / 2) for p in PERPENDICULAR[a]]
            for move, prob in outcomes:
                kernel[x, lattice.state_index(_step_cell(spec, lattice, cell, MOVES[move]))] += prob
    return kernel


@dataclass(frozen=True)
class FeatureMatrix:
    phi: np.ndarray

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    @property
    def sigma_min(self) -> float:
        return float(np.linalg.svd(self.phi, compute_uv=False).min())

    @property
    def kappa(self) -> float:
        smin = self.sigma_min
        return np.inf if smin == 0 else 1.0 / smin


def intent_cells(spec: GridSpec, lattice: StateActionLattice) -> list[Cell]:
    """Cell each (state, action) pair points at under a noiseless move."""
    out = []
    for cell in lattice.states:
        for a in range(lattice.n_actions):
            out.append(cell if spec.is_terminal(cell) else _step_cell(spec, lattice, cell, MOVES[a]))
    return out


def feature_map(spec: GridSpec, lattice: StateActionLattice) -> FeatureMatrix:
    """Columns: negated goal distance, nearest-obstacle distance, bias.

    Distances are measured from the intended successor cell and divided by
    the grid diagonal.
    """
    targets = np.asarray(intent_cells(spec, lattice), dtype=float)
    goal_dist = np.hypot(*(targets - np.asarray(spec.goal, dtype=float)).T)
    if spec.obstacles:
        obs = np.asarray(sorted(spec.obstacles), dtype=float)
        diff = targets[:, None, :] - obs[None, :, :]
        obs_dist = np.sqrt((diff**2).sum(-1)).min(axis=1)
    else:
        obs_dist = np.zeros(lattice.n)
    phi = np.column_stack([-goal_dist / spec.diagonal, obs_dist / spec.diagonal, np.ones(lattice.n)])
    phi.setflags(write=False)
    return FeatureMatrix(phi)


def true_reward(features: FeatureMatrix, theta_star: Sequence[float]) -> np.ndarray:
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_star.shape != (features.d,):
        raise ValueError(f"theta has shape {theta_star.shape}, expected ({features.d},)")
    return features.phi @ theta_star


def vi_iteration_cap(gamma: float, tol: float) -> int:
    if not 0.0 < gamma < 1.0:
        raise ConvergenceError(f"discount {gamma} does not define a contraction")
    return 10 * max(1, int(np.ceil(np.log(tol) / np.log(gamma))))


def greedy(q: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """Argmax per row with ties (within atol) broken by lowest action index."""
    best = q.max(axis=1, keepdims=True)
    scale = max(1.0, float(np.abs(best).max()))
    return np.argmax(q >= best - atol * scale, axis=1)


def policy_matrix(policy: np.ndarray, n_actions: int) -> np.ndarray:
    """One-hot (n_states, n_actions) matrix of a deterministic policy."""
    pi = np.zeros((len(policy), n_actions))
    pi[np.arange(len(policy)), policy] = 1.0
    return pi


def evaluate_policy(kernel: np.ndarray, reward: np.ndarray, pi: np.ndarray, gamma: float) -> np.ndarray:
    """State values of a (possibly stochastic) policy by an exact linear solve."""
    n_states, n_actions = pi.shape
    flat = pi.reshape(-1)
    p_pi = (flat[:, None] * kernel).reshape(n_states, n_actions, n_states).sum(axis=1)
    r_pi = (pi * reward.reshape(n_states, n_actions)).sum(axis=1)
    return np.linalg.solve(np.eye(n_states) - gamma * p_pi, r_pi)


def value_iteration(kernel: np.ndarray, reward: np.ndarray, gamma: float, tol: float = 1e-9):
    """Optimal state values and Q table, returns (V, Q, residual trace)."""
    n_states = kernel.shape[1]
    n_actions = kernel.shape[0] // n_states
    v = np.zeros(n_states)
    residuals = []
    for _ in range(vi_iteration_cap(gamma, tol)):
        q = (reward + gamma * kernel @ v).reshape(n_states, n_actions)
        v_new = q.max(axis=1)
        residuals.append(float(np.abs(v_new - v).max()))
        v = v_new
        if residuals[-1] < tol:
            return v, (reward + gamma * kernel @ v).reshape(n_states, n_actions), residuals
    raise ConvergenceError(f"value iteration did not reach {tol} (gamma={gamma})")


def optimal_policy(kernel: np.ndarray, reward: np.ndarray, gamma: float, tol: float = 1e-9) -> np.ndarray:
    """Deterministic optimal policy: value iteration then exact policy-iteration polish."""
    n_states = kernel.shape[1]
    n_actions = kernel.shape[0] // n_states
    _, q, _ = value_iteration(kernel, reward, gamma, tol)
    policy = greedy(q)
    for _ in range(100):
        v = evaluate_policy(kernel, reward, policy_matrix(policy, n_actions), gamma)
        q = (reward + gamma * kernel @ v).reshape(n_states, n_actions)
        improved = greedy(q)
        # keep the incumbent action unless another is strictly better
        keep = q[np.arange(n_states), policy] >= q[np.arange(n_states), improved] - 1e-12 * max(1.0, np.abs(q).max())
        improved = np.where(keep, policy, improved)
        if np.array_equal(improved, policy):
            break
        policy = improved
    return policy


@dataclass(frozen=True, eq=False)
class GridEnv:
    """A client MDP on a (possibly shared) lattice. Immutable after build."""

    spec: GridSpec
    lattice: StateActionLattice
    kernel: np.ndarray
    features: FeatureMatrix
    terminal: np.ndarray  # bool per lattice state
    starts: np.ndarray  # lattice state indices of valid start states

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def start_distribution(self) -> np.ndarray:
        p0 = np.zeros(self.lattice.n_states)
        p0[self.starts] = 1.0 / len(self.starts)
        return p0


def make_env(spec: GridSpec, lattice: StateActionLattice | None = None) -> GridEnv:
    if lattice is None:
        lattice = build_lattice(spec)
    elif (lattice.width, lattice.height) != (spec.width, spec.height):
        raise GridError("lattice and spec disagree on grid size")
    else:
        build_lattice(spec)  # reachability check
    kernel = transition_kernel(spec, lattice)
    kernel.setflags(write=False)
    terminal = np.array([spec.is_terminal(c) for c in lattice.states])
    terminal.setflags(write=False)
    starts = np.array([lattice.state_index(c) for c in start_cells(spec) if c in lattice])
    return GridEnv(spec, lattice, kernel, feature_map(spec, lattice), terminal, starts)


def expert_policy(env: GridEnv, reward: np.ndarray) -> np.ndarray:
    return optimal_policy(env.kernel, np.asarray(reward, dtype=float), env.gamma)


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # ((state index, action index), ...)
    terminated: str  # "goal" | "obstacle" | "horizon"

    def flat_indices(self, n_actions: int = len(ACTIONS)) -> np.ndarray:
        return np.array([s * n_actions + a for s, a in self.steps], dtype=int)


def _choose_action(policy: np.ndarray, s: int, t: int, rng: np.random.Generator) -> int:
    if policy.ndim == 1:
        return int(policy[s])
    probs = policy[t, s] if policy.ndim == 3 else policy[s]
    return int(rng.choice(len(probs), p=probs / probs.sum()))


def rollout(env: GridEnv, policy: np.ndarray, rng: np.random.Generator, start: int | None = None) -> Trajectory:
    """One episode; ``policy`` is deterministic (n_states,), stochastic
    (n_states, n_actions) or time-indexed (horizon, n_states, n_actions)."""
    lattice = env.lattice
    policy = np.asarray(policy)
    s = int(env.starts[rng.integers(len(env.starts))]) if start is None else int(start)
    steps = []
    for t in range(env.horizon):
        a = _choose_action(policy, s, t, rng)
        steps.append((s, a))
        cum = np.cumsum(env.kernel[lattice.index(s, a)])
        s = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        cell = lattice.states[s]
        if cell == env.spec.goal:
            return Trajectory(tuple(steps), "goal")
        if cell in env.spec.obstacles:
            return Trajectory(tuple(steps), "obstacle")
    return Trajectory(tuple(steps), "horizon")


def sample_demonstrations(env: GridEnv, policy: np.ndarray, count: int, seed) -> list[Trajectory]:
    """Roll out ``policy`` ``count`` times; ``seed`` is an int, SeedSequence or Generator."""
    if count < 1:
        raise ValueError("need at least one demonstration")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [rollout(env, policy, rng) for _ in range(count)]
