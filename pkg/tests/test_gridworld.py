import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedirl.gridworld import (
    GridError,
    GridSpec,
    StateActionLattice,
    Trajectory,
    build_lattice,
    evaluate_policy,
    expert_policy,
    make_env,
    rollout,
    sample_demonstrations,
    shared_lattice,
    transition_kernel,
    true_reward,
    value_iteration,
)


def test_lattice_counts_non_obstacle_cells():
    spec = GridSpec(5, 5, (4, 4), frozenset({(1, 1), (2, 2), (3, 0)}))
    assert build_lattice(spec).n == 88


def test_two_cell_lattice_is_bijective():
    lat = build_lattice(GridSpec(2, 1, (1, 0)))
    assert lat.n == 8
    assert sorted(lat.index(*lat.unindex(x)) for x in range(8)) == list(range(8))


def test_walled_off_goal_rejected():
    spec = GridSpec(3, 3, (2, 2), frozenset({(1, 2), (2, 1)}))
    with pytest.raises(GridError, match="unreachable"):
        build_lattice(spec)


@pytest.mark.parametrize("kwargs", [
    dict(goal=(5, 0)),
    dict(goal=(1, 1), obstacles=frozenset({(1, 1)})),
    dict(slip=0.2),
    dict(gamma=1.0),
    dict(horizon=0),
])
def test_gridspec_validation(kwargs):
    base = dict(width=3, height=3, goal=(2, 2))
    with pytest.raises(GridError):
        GridSpec(**{**base, **kwargs})


def test_gridspec_json_round_trip():
    spec = GridSpec(5, 4, (4, 3), frozenset({(1, 1), (2, 0)}), 0.07, 0.95, 25)
    assert GridSpec.from_json(spec.to_json()) == spec


def test_zero_slip_kernel_is_deterministic(open_5x5):
    assert np.all((open_5x5.kernel > 0).sum(axis=1) == 1)


def test_slip_splits_to_perpendicular_moves():
    spec = GridSpec(5, 5, (4, 4), slip=0.10)
    lat = build_lattice(spec)
    row = transition_kernel(spec, lat)[lat.index(lat.state_index((2, 2)), 0)]
    expected = {(2, 3): 0.9, (1, 2): 0.05, (3, 2): 0.05}
    for cell, p in expected.items():
        assert row[lat.state_index(cell)] == pytest.approx(p, abs=1e-15)
    assert np.count_nonzero(row) == 3


@given(st.integers(2, 6), st.integers(2, 6), st.floats(0, 0.1), st.integers(0, 10**6))
def test_kernel_rows_are_stochastic(w, h, slip, seed):
    rng = np.random.default_rng(seed)
    cells = [(x, y) for y in range(h) for x in range(w) if (x, y) != (w - 1, h - 1)]
    picks = rng.choice(len(cells), size=min(2, len(cells) - 1), replace=False)
    spec = GridSpec(w, h, (w - 1, h - 1), frozenset(cells[i] for i in picks), slip)
    for lattice in (shared_lattice(w, h), StateActionLattice(w, h, tuple(
            c for c in shared_lattice(w, h).states if c not in spec.obstacles))):
        kernel = transition_kernel(spec, lattice)
        np.testing.assert_allclose(kernel.sum(axis=1), 1.0, atol=1e-12)


def test_obstacle_is_absorbing_on_shared_lattice(client_5x5):
    lat = client_5x5.lattice
    s = lat.state_index((1, 2))
    # moving down from (1, 2) lands on the obstacle at (1, 1)
    target = lat.state_index((1, 1))
    assert client_5x5.kernel[lat.index(s, 1), target] == pytest.approx(0.95)
    np.testing.assert_allclose(client_5x5.kernel[lat.index(target, 0)], np.eye(lat.n_states)[target])


def test_lattice_indexing_shared_across_clients():
    a = make_env(GridSpec(5, 5, (4, 4), frozenset({(0, 1)}), 0.02), shared_lattice(5, 5))
    b = make_env(GridSpec(5, 5, (4, 4), frozenset({(3, 3), (2, 1)}), 0.09), shared_lattice(5, 5))
    assert a.lattice == b.lattice
    assert a.kernel.shape == b.kernel.shape


def test_goal_feature_zero_at_goal(open_5x5):
    lat = open_5x5.lattice
    goal = lat.state_index((4, 4))
    np.testing.assert_allclose(open_5x5.features.phi[[lat.index(goal, a) for a in range(4)], 0], 0.0)


def test_no_obstacles_gives_zero_obstacle_column(open_5x5):
    assert np.all(open_5x5.features.phi[:, 1] == 0.0)


def test_corner_goal_distance_normalizes_to_one(open_5x5):
    lat = open_5x5.lattice
    # moving left from (0, 0) hits the wall, so the intent cell is (0, 0)
    assert open_5x5.features.phi[lat.index(lat.state_index((0, 0)), 2), 0] == pytest.approx(-1.0)


def test_features_use_intent_cell(client_5x5):
    lat = client_5x5.lattice
    phi = client_5x5.features.phi
    up = phi[lat.index(lat.state_index((0, 0)), 0)]
    diag = np.sqrt(32)
    assert up[0] == pytest.approx(-np.hypot(4, 3) / diag)
    assert up[1] == pytest.approx(1.0 / diag)  # (0, 1) is one step from obstacle (1, 1)
    assert up[2] == 1.0


def test_feature_matrix_full_rank(client_5x5):
    assert client_5x5.features.sigma_min > 1e-8
    assert client_5x5.features.kappa == pytest.approx(1.0 / client_5x5.features.sigma_min)


def test_true_reward_cases(client_5x5):
    feats = client_5x5.features
    assert np.all(true_reward(feats, [0, 0, 0]) == 0)
    assert np.all(true_reward(feats, [0, 0, 1]) == 1)
    theta = np.array([1.0, 0.5, 0.0])
    r = true_reward(feats, theta)
    for x in range(0, feats.phi.shape[0], 7):
        assert r[x] == pytest.approx(sum(feats.phi[x, k] * theta[k] for k in range(3)), abs=1e-15)
    with pytest.raises(ValueError):
        true_reward(feats, [1.0, 2.0])


def test_expert_two_cells_moves_right():
    env = make_env(GridSpec(2, 1, (1, 0)))
    policy = expert_policy(env, true_reward(env.features, [1.0, 0.0, 0.0]))
    assert policy[env.lattice.state_index((0, 0))] == 3


def test_constant_reward_tie_break(open_5x5):
    policy = expert_policy(open_5x5, np.ones(open_5x5.lattice.n))
    assert np.all(policy == 0)


def test_expert_reaches_goal_from_every_start(open_5x5):
    policy = expert_policy(open_5x5, true_reward(open_5x5.features, [1.0, 0.5, 0.0]))
    rng = np.random.default_rng(0)
    for s in open_5x5.starts:
        assert rollout(open_5x5, policy, rng, start=s).terminated == "goal"


def test_value_iteration_residuals_contract(client_5x5):
    reward = true_reward(client_5x5.features, [1.0, 0.5, 0.0])
    _, _, res = value_iteration(client_5x5.kernel, reward, client_5x5.gamma)
    res = np.array(res)
    assert np.all(np.diff(res[1:]) <= 1e-15)
    assert np.all(res[2:] <= client_5x5.gamma * res[1:-1] + 1e-12)


def test_policy_evaluation_matches_iteration(client_5x5):
    reward = true_reward(client_5x5.features, [1.0, 0.5, 0.0])
    v, q, _ = value_iteration(client_5x5.kernel, reward, client_5x5.gamma, tol=1e-12)
    policy = q.argmax(axis=1)
    pi = np.eye(4)[policy]
    np.testing.assert_allclose(evaluate_policy(client_5x5.kernel, reward, pi, client_5x5.gamma), v, atol=1e-9)


def test_deterministic_demos_repeat_per_start(open_5x5):
    policy = expert_policy(open_5x5, true_reward(open_5x5.features, [1.0, 0.5, 0.0]))
    demos = sample_demonstrations(open_5x5, policy, 60, seed=3)
    by_start = {}
    for traj in demos:
        by_start.setdefault(traj.steps[0][0], set()).add(traj)
    assert all(len(v) == 1 for v in by_start.values())


def test_demos_reproducible(client_5x5):
    policy = expert_policy(client_5x5, true_reward(client_5x5.features, [1.0, 0.5, 0.0]))
    assert sample_demonstrations(client_5x5, policy, 20, 9) == sample_demonstrations(client_5x5, policy, 20, 9)


def test_trajectory_termination_labels(client_5x5):
    rng = np.random.default_rng(0)
    walk_down = np.ones(client_5x5.lattice.n_states, dtype=int)
    lat = client_5x5.lattice
    traj = rollout(client_5x5, walk_down, rng, start=lat.state_index((1, 2)))
    assert isinstance(traj, Trajectory)
    assert traj.terminated in ("obstacle", "horizon")
    for s, _ in traj.steps:
        assert lat.states[s] not in client_5x5.spec.obstacles


def _exact_discounted_features(env, policy):
    """Independent forward pass with explicit episode termination."""
    lat = env.lattice
    dist = env.start_distribution()
    mu = np.zeros(env.features.d)
    for t in range(env.horizon):
        nxt = np.zeros(lat.n_states)
        for s in np.flatnonzero(dist):
            x = lat.index(s, int(policy[s]))
            mu += env.gamma**t * dist[s] * env.features.phi[x]
            for s2 in np.flatnonzero(env.kernel[x]):
                if not env.terminal[s2]:
                    nxt[s2] += dist[s] * env.kernel[x, s2]
        dist = nxt
    return mu


def test_empirical_features_close_to_exact(client_5x5):
    from fedirl.irl import empirical_feature_expectation

    policy = expert_policy(client_5x5, true_reward(client_5x5.features, [1.0, 0.5, 0.0]))
    exact = _exact_discounted_features(client_5x5, policy)
    demos = sample_demonstrations(client_5x5, policy, 50, seed=0)
    emp = empirical_feature_expectation(demos, client_5x5.features, client_5x5.gamma).mu
    # 50 episodes from uniform random starts: compare at 3 standard errors, and
    # record the fixed 0.05 bound separately in the acceptance log.
    per = np.array([empirical_feature_expectation([d], client_5x5.features, client_5x5.gamma).mu for d in demos])
    se = per.std(axis=0, ddof=1) / np.sqrt(len(demos))
    assert np.all(np.abs(emp - exact) <= 3 * se + 1e-12)


@pytest.mark.xfail(strict=True, reason="50 episodes from uniform random starts give ~0.13 median "
                   "l_inf Monte-Carlo error; 0.05 needs roughly 10x more episodes")
def test_empirical_features_within_fixed_tolerance(client_5x5):
    from fedirl.irl import empirical_feature_expectation

    policy = expert_policy(client_5x5, true_reward(client_5x5.features, [1.0, 0.5, 0.0]))
    exact = _exact_discounted_features(client_5x5, policy)
    emp = empirical_feature_expectation(sample_demonstrations(client_5x5, policy, 50, seed=0),
                                        client_5x5.features, client_5x5.gamma).mu
    assert np.abs(emp - exact).max() <= 0.05


def test_empirical_features_converge_with_many_episodes(client_5x5):
    from fedirl.irl import empirical_feature_expectation

    policy = expert_policy(client_5x5, true_reward(client_5x5.features, [1.0, 0.5, 0.0]))
    exact = _exact_discounted_features(client_5x5, policy)
    emp = empirical_feature_expectation(sample_demonstrations(client_5x5, policy, 5000, seed=0),
                                        client_5x5.features, client_5x5.gamma).mu
    assert np.abs(emp - exact).max() <= 0.05
