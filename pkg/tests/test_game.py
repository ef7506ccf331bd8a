import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bandit_dataset, scheduled_dataset
from mgpoison.confidence import make_rng
from mgpoison.costs import worst_case_instance
from mgpoison.datasets import SECTION3_PAYOFFS, demo_game_dataset
from mgpoison.errors import UncoveredCell
from mgpoison.game import (GameShape, JointPolicy, MarkovGame, OfflineDataset,
                           check_full_coverage, enumerate_policies, is_iota_mpdse,
                           load_dataset, mle_game, mle_markov_game, q_values,
                           save_dataset, visit_counts)


def test_joint_index_roundtrip():
    shape = GameShape(3, 2, (2, 3, 2), 1)
    for idx in range(shape.n_joint_actions):
        assert shape.joint_index(shape.joint_tuple(idx)) == idx
    assert shape.n_joint_actions == 12
    # compose/decompose agree
    for i in range(3):
        for a in range(shape.actions_per_player[i]):
            for o in range(shape.n_others(i)):
                j = shape.compose(i, a, o)
                assert shape.own_action_of(i)[j] == a
                assert shape.others_index_of(i)[j] == o


def test_visit_counts_single_step():
    shape = GameShape(2, 1, (2, 2), 1)
    ds = OfflineDataset(shape, np.array([[0]]), np.array([[[0, 0]]]),
                        np.array([[[0.0, 0.0]]]))
    counts = visit_counts(ds)
    assert counts.counts[0, 0, 0] == 1
    assert counts.counts.sum() == 1


def test_visit_counts_worst_case_generator():
    inst = worst_case_instance(2, 2, 2, 2, 4, 1.0, 0.1, 0.05)
    counts = visit_counts(inst.dataset)
    assert counts.n_min == counts.n_max == 4


def test_visit_counts_recount_oracle(rng):
    shape = GameShape(2, 2, (2, 2), 3)
    ds = scheduled_dataset(shape, 2, 1.0, rng)
    extra = OfflineDataset(  # add a few arbitrary episodes on top
        shape,
        np.concatenate([ds.states, ds.states[:4]]),
        np.concatenate([ds.actions, ds.actions[:4]]),
        np.concatenate([ds.rewards, ds.rewards[:4]]),
    )
    counts = visit_counts(extra).counts
    tally = {}
    for k in range(extra.n_episodes):
        for h in range(shape.horizon):
            key = (h, int(extra.states[k, h]),
                   shape.joint_index(extra.actions[k, h]))
            tally[key] = tally.get(key, 0) + 1
    for (h, s, a), v in tally.items():
        assert counts[h, s, a] == v
    assert counts.sum() == extra.n_episodes * shape.horizon


def test_coverage_report():
    inst = worst_case_instance(2, 2, 2, 2, 1, 1.0, 0.1, 0.05)
    counts = visit_counts(inst.dataset)
    assert check_full_coverage(counts).satisfied

    trimmed = OfflineDataset(inst.dataset.shape, inst.dataset.states[1:],
                             inst.dataset.actions[1:], inst.dataset.rewards[1:])
    report = check_full_coverage(visit_counts(trimmed))
    assert not report.satisfied
    assert len(report.uncovered) >= 1


def test_mle_single_cell_mean():
    shape = GameShape(1, 1, (1,), 1)
    ds = OfflineDataset(shape, np.array([[0]]), np.array([[[0]]]),
                        np.array([[[0.5]]]))
    rewards, transitions = mle_game(ds)
    assert rewards[0, 0, 0, 0] == 0.5
    assert transitions.shape == (0, 1, 1, 1)


def test_mle_matches_demo_payoffs(section3):
    dataset, _ = section3
    rewards, _ = mle_game(dataset, bound=3.0)
    shape = dataset.shape
    for joint, payoff in SECTION3_PAYOFFS.items():
        j = shape.joint_index(joint)
        assert rewards[0, 0, 0, j] == payoff[0]
        assert rewards[1, 0, 0, j] == payoff[1]


def test_mle_matches_flip_pattern():
    inst = worst_case_instance(2, 2, 1, 1, 3, 1.0, 0.1, 0.05)
    rewards, _ = mle_game(inst.dataset, 1.0)
    shape = inst.shape
    for j in range(shape.n_joint_actions):
        joint = shape.joint_tuple(j)
        for i in range(2):
            expected = -1.0 if joint[i] == 0 else 1.0
            assert rewards[i, 0, 0, j] == expected


def test_mle_requires_coverage():
    shape = GameShape(1, 1, (2,), 1)
    ds = OfflineDataset(shape, np.array([[0]]), np.array([[[0]]]),
                        np.array([[[0.0]]]))
    with pytest.raises(UncoveredCell):
        mle_game(ds)


def test_q_values_single_period_is_reward_table(rng):
    shape = GameShape(2, 2, (2, 2), 1)
    rewards = rng.uniform(-1, 1, size=(2, 1, 2, 4))
    game = MarkovGame(shape, rewards, np.zeros((0, 2, 4, 2)),
                      np.array([0.5, 0.5]), 1.0)
    tables = q_values(game, JointPolicy.constant(shape, (0, 0)))
    assert np.array_equal(tables.q, rewards)


def test_q_values_constant_game():
    shape = GameShape(2, 2, (2, 2), 2)
    c = 0.37
    rewards = np.full((2, 2, 2, 4), c)
    transitions = np.full((1, 2, 4, 2), 0.5)
    game = MarkovGame(shape, rewards, transitions, np.array([0.5, 0.5]), 1.0)
    tables = q_values(game, JointPolicy.constant(shape, (1, 1)))
    assert np.allclose(tables.q[:, 0], 2 * c)
    assert np.allclose(tables.q[:, 1], c)


def test_q_values_against_rollouts(rng):
    shape = GameShape(2, 2, (2, 2), 2)
    ds = scheduled_dataset(shape, 3, 1.0, rng)
    game = mle_markov_game(ds, 1.0)
    policy = JointPolicy.constant(shape, (1, 0))
    tables = q_values(game, policy)

    n_rollouts = 100_000
    sim = make_rng(99)
    start_state, start_joint = 1, 2  # evaluate Q_{i,1}(s=1, a=(1,0))
    states = np.full(n_rollouts, start_state)
    total = np.zeros((n_rollouts, 2))
    joint = np.full(n_rollouts, start_joint)
    for h in range(shape.horizon):
        total += game.rewards[:, h, states, joint].T
        if h < shape.horizon - 1:
            probs = game.transitions[h, states, joint]
            states = (sim.random(n_rollouts)[:, None]
                      > probs.cumsum(axis=1)).sum(axis=1)
            joint = policy.joint_indices[h + 1, states]
    estimate = total.mean(axis=0)
    sigma = total.std(axis=0) / math.sqrt(n_rollouts)
    for i in range(2):
        assert abs(estimate[i] - tables.q[i, 0, start_state, start_joint]) \
            <= 3 * sigma[i] + 1e-9


def test_mpdse_demo_game(section3):
    dataset, _ = section3
    game = mle_markov_game(dataset, 3.0)
    shape = dataset.shape
    good = is_iota_mpdse(game, JointPolicy.constant(shape, (0, 0)), 1.0)
    assert good.is_equilibrium
    assert good.worst_margin == pytest.approx(0.0, abs=1e-12)
    bad = is_iota_mpdse(game, JointPolicy.constant(shape, (1, 1)), 0.0)
    assert not bad.is_equilibrium


def test_mpdse_vacuous_single_action():
    shape = GameShape(2, 1, (1, 1), 1)
    game = MarkovGame(shape, np.zeros((2, 1, 1, 1)), np.zeros((0, 1, 1, 1)),
                      np.array([1.0]), 1.0)
    decision = is_iota_mpdse(game, JointPolicy.constant(shape, (0, 0)), 5.0)
    assert decision.is_equilibrium
    assert decision.worst_margin == math.inf


def test_strict_mpdse_unique(section3):
    # whenever the test is positive with a strict margin, no rival passes
    dataset, _ = section3
    game = mle_markov_game(dataset, 3.0)
    shape = dataset.shape
    target = JointPolicy.constant(shape, (0, 0))
    assert is_iota_mpdse(game, target, 0.5).is_equilibrium
    assert shape.n_deterministic_policies <= 64
    for policy in enumerate_policies(shape):
        if np.array_equal(policy.joint_indices, target.joint_indices):
            continue
        assert not is_iota_mpdse(game, policy, 0.5).is_equilibrium


def test_mle_invariant_under_cell_permutation(rng):
    payoffs = {(0, 0): (1.0, 2.0), (0, 1): (0.2, -1.0),
               (1, 0): (0.5, 0.5), (1, 1): (-0.3, 0.9)}
    ds = bandit_dataset(payoffs, {k: 4 for k in payoffs})
    noisy = ds.rewards + rng.normal(0, 0.1, size=ds.rewards.shape)
    base, _ = mle_game(ds.replace_rewards(noisy))
    # permute episodes within a cell: the per-cell means cannot move
    cells = ds.joint_action_indices[:, 0]
    perm = np.arange(ds.n_episodes)
    for a in np.unique(cells):
        members = np.nonzero(cells == a)[0]
        perm[members] = members[rng.permutation(members.size)]
    again, _ = mle_game(ds.replace_rewards(noisy[perm]))
    np.testing.assert_allclose(base, again, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(min_value=0.1, max_value=10.0,
                       allow_nan=False, allow_infinity=False))
def test_q_values_scale_linearly(scale):
    rng = make_rng(5)
    shape = GameShape(2, 2, (2, 2), 2)
    ds = scheduled_dataset(shape, 2, 1.0, rng)
    game = mle_markov_game(ds, 1.0)
    scaled = MarkovGame(shape, game.rewards * scale, game.transitions,
                        game.initial_dist, math.inf)
    policy = JointPolicy.constant(shape, (0, 1))
    base = q_values(game, policy)
    big = q_values(scaled, policy)
    np.testing.assert_allclose(big.q, base.q * scale, atol=1e-12 * max(1, scale))
    np.testing.assert_allclose(big.v, base.v * scale, atol=1e-12 * max(1, scale))


def test_dataset_roundtrip(tmp_path, rng):
    shape = GameShape(2, 2, (2, 3), 2)
    ds = scheduled_dataset(shape, 1, 2.0, rng)
    data = tmp_path / "episodes.jsonl"
    header = tmp_path / "header.json"
    save_dataset(ds, str(data), str(header), bound=2.0)
    loaded, bound = load_dataset(str(data), str(header))
    assert bound == 2.0
    assert loaded.shape == shape
    np.testing.assert_array_equal(loaded.states, ds.states)
    np.testing.assert_array_equal(loaded.actions, ds.actions)
    np.testing.assert_allclose(loaded.rewards, ds.rewards, atol=0)

    save_dataset(ds, str(data), str(header), bound=math.inf)
    _, bound = load_dataset(str(data), str(header))
    assert math.isinf(bound)
