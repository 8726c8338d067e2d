import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cw_arena import baselines as bl
from cw_arena.env import ActionSpace, EpisodeConfig, ProcessSpec
from cw_arena.errors import InvalidConfiguration, InvalidParameter
from cw_arena.mac import MacParams, Observation

DESK = MacParams(interval_length=2.0)


def test_single_state_value():
    pol = bl.value_iteration(np.array([[1.0]]), np.array([[1.0]]), 0.9)
    assert pol.q[0, 0] == pytest.approx(10.0, abs=1e-8)


def test_two_state_cycle_values():
    # leaving state 0 earns 1, leaving state 1 earns 0
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    R = np.array([[0.0], [1.0]])  # indexed by the state arrived in
    pol = bl.value_iteration(R, P, 0.9)
    assert pol.q[:, 0] == pytest.approx([100 / 19, 90 / 19], abs=1e-8)


def test_residuals_shrink_and_converge():
    rng = np.random.default_rng(0)
    P = rng.random((4, 4))
    P /= P.sum(axis=1, keepdims=True)
    R = rng.random((4, 3))
    pol = bl.value_iteration(R, P, 0.9, tol=1e-12)
    res = np.array(pol.residuals)
    assert np.all(np.diff(res) <= 1e-15)
    again = bl.bellman_backup(pol.q, R, P, 0.9)
    assert np.max(np.abs(again - pol.q)) < 1e-11


def test_value_iteration_input_checks():
    with pytest.raises(InvalidParameter):
        bl.value_iteration(np.ones((2, 2)), np.array([[0.5, 0.6], [0.5, 0.5]]), 0.9)
    with pytest.raises(InvalidParameter):
        bl.value_iteration(np.ones((2, 2)), np.eye(3), 0.9)
    with pytest.raises(InvalidParameter):
        bl.value_iteration(np.ones((2, 2)), np.eye(2), 1.0)


def _brute_force(R, P, discount):
    S, A = R.shape
    best, best_v = None, None
    for acts in itertools.product(range(A), repeat=S):
        v = bl.policy_value(np.array(acts), R, P, discount)
        if best_v is None or np.all(v >= best_v - 1e-12) and np.any(v > best_v + 1e-12):
            best, best_v = acts, v
    return np.array(best), best_v


@given(st.integers(2, 3), st.integers(2, 4), st.integers(0, 2**31))
def test_value_iteration_matches_enumeration(S, A, seed):
    rng = np.random.default_rng(seed)
    P = rng.random((S, S)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    R = rng.random((S, A))
    pol = bl.value_iteration(R, P, 0.9, tol=1e-13)
    acts, v = _brute_force(R, P, 0.9)
    assert np.allclose(pol.q.max(axis=1), v, atol=1e-9)
    assert np.allclose(bl.policy_value(pol.actions, R, P, 0.9), v, atol=1e-9)


def test_myopic_limit_is_greedy_on_expected_reward():
    rng = np.random.default_rng(3)
    P = rng.random((3, 3))
    P /= P.sum(axis=1, keepdims=True)
    R = rng.random((3, 4))
    pol = bl.value_iteration(R, P, 1e-9)
    assert np.array_equal(pol.actions, np.argmax(P @ R, axis=1))


def test_tabular_policy_unknown_state():
    pol = bl.value_iteration(np.ones((2, 1)), np.eye(2), 0.5, state_keys=[1, 2])
    assert pol.act(2) == 0
    with pytest.raises(InvalidParameter):
        pol.act(7)


def test_reward_table_bounds_and_stderr():
    cfg = EpisodeConfig(n_nodes=5)
    small = bl.estimate_reward_table(cfg, DESK, replications=40, seed=1)
    big = bl.estimate_reward_table(cfg, DESK, replications=160, seed=1)
    for t in (small, big):
        assert np.all((1 / 5 <= t.mean) & (t.mean <= 1))
        assert t.mean.shape == (2, 5) and t.state_keys == [1, 2]
    ratio = big.stderr / small.stderr
    assert abs(np.median(ratio) - 0.5) < 0.1
    with pytest.raises(InvalidParameter):
        bl.estimate_reward_table(cfg, DESK, replications=0)


def test_homogeneous_cell_is_fair():
    cfg = EpisodeConfig(action_space=ActionSpace((32,)))
    t = bl.estimate_reward_table(cfg, MacParams(), replications=200, seed=2)
    assert t.mean[t.row(1), 0] >= 0.95


def test_table_json_roundtrip():
    cfg = EpisodeConfig(action_space=ActionSpace((32, 64)), process=ProcessSpec("zigzag", 0.5))
    t = bl.estimate_reward_table(cfg, MacParams(interval_length=0.1), replications=3)
    back = bl.table_from_json(bl.table_to_json(t))
    assert back.state_keys == t.state_keys
    assert np.array_equal(back.mean, t.mean) and np.array_equal(back.stderr, t.stderr)
    with pytest.raises(InvalidParameter):
        bl.table_from_json('{"format": "other"}')


def test_zigzag_states_sharing_an_mcw_share_estimates():
    cfg = EpisodeConfig(action_space=ActionSpace((32, 64)), process=ProcessSpec("zigzag", 0.5))
    t = bl.estimate_reward_table(cfg, MacParams(interval_length=0.1), replications=3)
    i, j = t.row((2, 1)), t.row((2, -1))
    assert np.array_equal(t.mean[i], t.mean[j])


def test_cp_single_action():
    cfg = EpisodeConfig(action_space=ActionSpace((32,)))
    table = bl.RewardTable(np.array([[0.9], [0.8]]), np.zeros((2, 1)), 1, [1, 2])
    a, scores = bl.cp_search(table, cfg, episodes=3)
    assert a == 0 and scores.shape == (1,)


def test_cp_ties_go_to_smallest():
    cfg = EpisodeConfig()
    table = bl.RewardTable(np.full((2, 5), 0.5), np.zeros((2, 5)), 1, [1, 2])
    assert bl.cp_search(table, cfg, episodes=2)[0] == 0


def test_cp_never_beats_opt():
    cfg = EpisodeConfig(process=ProcessSpec("markov2", 0.75))
    rng = np.random.default_rng(4)
    table = bl.RewardTable(rng.random((2, 5)), np.zeros((2, 5)), 1, [1, 2])
    a, scores = bl.cp_search(table, cfg, episodes=400)
    P = cfg.process.build().transition_matrix()
    opt = bl.value_iteration(table.mean, P, cfg.discount)
    # per-step expected utility of OPT's greedy choice under the stationary law
    opt_step = 0.5 * sum(P[s] @ table.mean[:, opt.actions[s]] for s in range(2))
    assert scores[a] <= opt_step + 0.01


def test_cp_picks_128_in_a_crowd():
    cfg = EpisodeConfig(n_nodes=20, process=ProcessSpec("markov2", 0.9))
    table = bl.estimate_reward_table(cfg, MacParams(), replications=200, seed=0)
    a, scores = bl.cp_search(table, cfg, episodes=200)
    assert cfg.action_space[a] == 128


def test_sp_requires_32():
    assert bl.sp_action(ActionSpace((32, 64))) == 0
    with pytest.raises(InvalidConfiguration):
        bl.sp_action(ActionSpace((48, 64)))


SPACE = ActionSpace((32, 48, 64, 96, 128))


@pytest.mark.parametrize(
    "mcw,f,b,expected",
    [
        (32, 0.2, 0.7, 48),  # index 0.2*9/0.7 = 2.57 > 1.5
        (64, 0.0, 0.9, 48),  # starved -> smaller
        (64, 0.09, 0.81, 64),  # fair -> hold
        (128, 0.5, 0.4, 128),  # already at the top
        (32, 0.01, 0.9, 32),  # already at the bottom
        (100, 0.09, 0.81, 96),  # off-ladder MCW snaps to nearest rung
    ],
)
def test_fi_examples(mcw, f, b, expected):
    assert bl.fi_act(mcw, Observation(f, b), 10, SPACE) == expected


def test_fi_index_edge_cases():
    assert bl.fairness_index(Observation(0.0, 0.0), 10) == 1.0
    assert math.isinf(bl.fairness_index(Observation(0.3, 0.0), 10))
    with pytest.raises(InvalidParameter):
        bl.fi_act(32, Observation(0.1, 0.1), 10, SPACE, threshold=1.0)


@given(st.sampled_from(SPACE.mcw_values), st.floats(0, 1), st.floats(0, 1), st.integers(2, 40))
def test_fi_moves_at_most_one_rung(mcw, f, b, n):
    out = bl.fi_act(mcw, Observation(f, b * (1 - f)), n, SPACE)
    assert out in SPACE.mcw_values
    assert abs(SPACE.index(out) - SPACE.index(mcw)) <= 1


def test_fi_reference_cases():
    assert bl.fi_act(64, Observation(0.3, 0.3), 10, SPACE) == 96
    assert bl.fairness_index(Observation(0.1, 0.9), 10) == pytest.approx(1.0)
    assert bl.fi_act(64, Observation(0.1, 0.9), 10, SPACE) == 64


def test_sp_holds_32_over_an_episode():
    from cw_arena.env import ContentionEnv
    from cw_arena.harness import ConstantPolicy

    env = ContentionEnv(EpisodeConfig(steps_per_episode=8), MacParams(interval_length=0.1))
    policy = ConstantPolicy(bl.sp_action(env.space))
    env.reset(0, 0)
    chosen = []
    while not env.done:
        env.step(policy.act(env))
        chosen.append(env.state.own_mcw)
    assert chosen == [32] * 8
