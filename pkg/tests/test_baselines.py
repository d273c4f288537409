import numpy as np
import pytest

from behex._rng import make_rng
from behex.baselines import (
    BehaviorCloning,
    CountBonusPolicy,
    RandomPolicy,
    count_bonus_action,
    make_bc_noise,
    train_bc,
    train_bc_history,
)
from behex.coverage import OneHotFeatures
from behex.envs import build_grid_maze, build_two_goal_tree, terminal_feature_map
from behex.mdp import TabularMdp, Trajectory, generate_dataset
from behex.policy import BehavioralExplorationPolicy


@pytest.fixture(scope="module")
def tree_data():
    mdp, beta = build_two_goal_tree(0.1, 2)
    ds = generate_dataset(mdp, beta, 10000, make_rng(0))
    return mdp, beta, terminal_feature_map(mdp), ds


def test_bc_row_matches_frequency(tree_data):
    _, _, _, ds = tree_data
    bc = train_bc(ds)
    row = bc.action_proba(0)
    assert abs(row[0] - 0.9) < 0.01


def test_bc_single_trajectory_point_masses():
    bc = train_bc([Trajectory([0, 1, 2], [1, 0, 1])])
    np.testing.assert_array_equal(bc.action_proba(1), [1.0, 0.0])
    np.testing.assert_array_equal(bc.action_proba(2), [0.0, 1.0])


def test_bc_unseen_state_uniform_on_support():
    bc = BehaviorCloning().fit([Trajectory([0], [0])], n_actions=3, support=np.array([[1, 1, 1], [1, 0, 1]], bool))
    np.testing.assert_array_equal(bc.action_proba(1), [0.5, 0.0, 0.5])
    with pytest.raises(ValueError):
        train_bc([])


def test_bc_equals_be_marginals(tree_data):
    _, _, fmap, ds = tree_data
    bc = train_bc(ds)
    empty = BehavioralExplorationPolicy(fmap, history_mode="empty", n_buckets=1).fit(ds)
    full = BehavioralExplorationPolicy(fmap, n_histories=3).fit(ds)
    for s in range(5):
        row = bc.action_proba(s)
        np.testing.assert_array_equal(empty.action_proba(s, [], 0.0), row)
        np.testing.assert_array_equal(full.bc_proba(s), row)
    # counts identity: BE counts summed over buckets and summaries are M times BC counts
    for (s, task), row in full.bc_counts_.items():
        np.testing.assert_array_equal(row, 3 * bc.counts_[(s, None)])


def test_bc_noise(tree_data):
    _, _, _, ds = tree_data
    bc = train_bc(ds)
    np.testing.assert_array_equal(make_bc_noise(bc, 0.0).action_proba(0), bc.action_proba(0))
    np.testing.assert_allclose(make_bc_noise(bc, 1.0).action_proba(0), [0.5, 0.5])
    noisy = make_bc_noise(bc, 0.15).action_proba(0)
    assert abs(noisy.sum() - 1) < 1e-12 and np.all(noisy >= 0.85 * bc.action_proba(0))
    with pytest.raises(ValueError):
        make_bc_noise(bc, 1.5)


def test_bc_history_matches_single_bucket_be(tree_data):
    _, _, fmap, ds = tree_data
    hbc = train_bc_history(ds, fmap, n_histories=2)
    be = BehavioralExplorationPolicy(fmap, n_histories=2, n_buckets=1).fit(ds)
    assert {k[:2] for k in hbc.counts_} == {k[:2] for k in be.counts_}
    for (s, sid, _, _), row in hbc.counts_.items():
        np.testing.assert_array_equal(row, sum(r for k, r in be.counts_.items() if k[:2] == (s, sid)))
    assert {k[2] for k in hbc.counts_} == {0}


def test_bc_history_empty_mode_is_bc(tree_data):
    _, _, fmap, ds = tree_data
    hbc = train_bc_history(ds, fmap, history_mode="empty")
    bc = train_bc(ds)
    for s in range(5):
        np.testing.assert_array_equal(hbc.action_proba(s, [0, 1]), bc.action_proba(s))


def test_bc_history_depends_on_summary(tree_data):
    _, _, fmap, ds = tree_data
    hbc = train_bc_history(ds, fmap, min_history_trajectories=0, max_history_trajectories=2)
    a = hbc.action_proba(0, [0, 1, 2])
    b = hbc.action_proba(0, [0, 3, 4])
    assert a.sum() == pytest.approx(1) and b.sum() == pytest.approx(1)


def test_random_policy():
    np.testing.assert_array_equal(RandomPolicy(4).action_proba(0), [0.25] * 4)


def _two_cell_chain():
    trans = np.zeros((2, 2, 2))
    trans[:, 0, 0] = 1.0  # go to cell 0
    trans[:, 1, 1] = 1.0  # go to cell 1
    return TabularMdp(trans, [1.0, 0.0], 5)


def test_count_bonus_choices():
    mdp = _two_cell_chain()
    rng = make_rng(0)
    picks = {count_bonus_action(mdp, 0, [0, 0], 1.0, rng) for _ in range(50)}
    assert picks == {0, 1}
    assert count_bonus_action(mdp, 0, [3, 0], 1.0, rng) == 1
    with pytest.raises(ValueError):
        count_bonus_action(mdp, 0, [-1, 0], 1.0, rng)
    with pytest.raises(ValueError):
        count_bonus_action(mdp, 0, [0, 0], 0.0, rng)


def test_count_bonus_alternates_on_chain():
    mdp = _two_cell_chain()
    pol = CountBonusPolicy(mdp)
    counts = np.array([1.0, 0.0])
    state = 0
    rng = make_rng(1)
    for _ in range(20):
        a = pol.act(state, counts, rng)
        state = mdp.successor(state, a)
        counts[state] += 1
        # always heads for the less visited cell, so visits stay balanced
        assert abs(counts[0] - counts[1]) <= 1


def test_count_bonus_needs_deterministic():
    trans = np.full((2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        CountBonusPolicy(TabularMdp(trans, [1.0, 0.0], 1))
