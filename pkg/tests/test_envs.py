import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from behex._rng import make_rng
from behex.envs import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    build_grid_maze,
    build_random_terminal_tree,
    build_two_goal_tree,
    parse_layout,
    shortest_path_table,
)
from behex.mdp import generate_dataset, rollout, validate_trajectory
from behex.prop1 import compute_terminal_visitation


def test_two_goal_tree_structure():
    mdp, beta = build_two_goal_tree(0.1, 3)
    assert mdp.is_deterministic and mdp.horizon == 3
    assert list(np.flatnonzero(mdp.terminal)) == [3, 6]
    np.testing.assert_allclose(beta.table[0], [0.9, 0.1])
    assert compute_terminal_visitation(mdp, beta) == pytest.approx({3: 0.9, 6: 0.1})


def test_two_goal_tree_symmetric_frequencies():
    mdp, beta = build_two_goal_tree(0.5, 1)
    finals = np.array([rollout(mdp, beta, r).final_state for r in [make_rng(0)] for _ in range(4000)])
    assert abs(np.mean(finals == 1) - 0.5) < 0.03


def test_two_goal_tree_rollouts_validate():
    mdp, beta = build_two_goal_tree(0.3, 2)
    rng = make_rng(1)
    assert all(validate_trajectory(mdp, rollout(mdp, beta, rng)) == [] for _ in range(100))


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2])
def test_two_goal_tree_bad_p(p):
    with pytest.raises(ValueError):
        build_two_goal_tree(p, 1)


def test_random_tree_degenerate_case_matches_two_goal():
    mdp, beta, fmap = build_random_terminal_tree(2, 1, 2, seed=4)
    two, _ = build_two_goal_tree(0.5, 1)
    assert mdp.n_states == two.n_states and mdp.is_deterministic
    assert sorted(fmap.directions([1, 2])) == [0, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(2, 3), st.integers(1, 4), st.integers(0, 10**6), st.booleans())
def test_random_tree_contract(n_beta, branching, depth, seed, trap):
    if branching**depth < n_beta:
        with pytest.raises(ValueError):
            build_random_terminal_tree(n_beta, depth, branching, seed, trap)
        return
    mdp, beta, fmap = build_random_terminal_tree(n_beta, depth, branching, seed, trap)
    assert mdp.is_deterministic and mdp.start_state == 0
    w = compute_terminal_visitation(mdp, beta)
    assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)
    assert {int(fmap.directions([s])[0]) for s in w} == set(range(n_beta))
    shared = fmap.directions(np.flatnonzero(~mdp.terminal))
    assert len(set(shared)) == 1 and shared[0] == fmap.dim - 1
    assert min(w.values()) > 0


def test_random_tree_leaf_probabilities_are_path_products():
    mdp, beta, _ = build_random_terminal_tree(3, 2, 2, seed=9)
    w = compute_terminal_visitation(mdp, beta)
    t = beta.table
    for leaf in range(3, 7):
        parent = (leaf - 1) // 2
        expected = t[0, parent - 1] * t[parent, (leaf - 1) % 2]
        assert w[leaf] == pytest.approx(expected, abs=1e-15)


def test_open_grid_uniform_reaches_everything():
    mdp, beta, fmap, maze = build_grid_maze("S..\n...\n...", horizon=200)
    assert maze.n_regions == 9 and fmap.dim == 9
    traj = rollout(mdp, beta, make_rng(0))
    assert len(set(traj.states)) == 9


def test_two_goal_maze_terminal_distribution():
    layout = "G.S.G"
    mdp, beta, _, maze = build_grid_maze(layout, [0.9, 0.1], horizon=4)
    ds = generate_dataset(mdp, beta, 2000, make_rng(2))
    finals = np.array([t.final_state for t in ds])
    assert abs(np.mean(finals == maze.goals[0]) - 0.9) < 0.03


def test_wall_moves_self_loop():
    maze_text = "S#.\n.#.\n..."
    mdp, _, _, maze = build_grid_maze(maze_text)
    s = maze.start
    assert mdp.successor(s, RIGHT) == s
    assert mdp.successor(s, UP) == s
    assert mdp.successor(s, LEFT) == s
    assert mdp.successor(s, DOWN) == maze.state_of(1, 0)


def test_layout_regions_and_errors():
    maze = parse_layout("S1\n11", region_block=1)
    assert maze.n_regions == 2
    assert parse_layout("S...\n....", region_block=2).n_regions == 2
    with pytest.raises(ValueError):
        parse_layout("...")
    with pytest.raises(ValueError):
        parse_layout("S?")
    with pytest.raises(ValueError):
        build_grid_maze("S#G")


def test_shortest_path_table_moves_closer():
    maze = parse_layout("S...\n.##.\n...G")
    goal = maze.goals[0]
    table = shortest_path_table(maze, goal)
    np.testing.assert_allclose(table.sum(axis=1), 1.0)
    assert table[maze.start, UP] == 0 and table[maze.start, LEFT] == 0
    assert table[maze.start, RIGHT] > 0 and table[maze.start, DOWN] > 0


def test_maze_feature_kinds():
    for kind, dim in (("identity", 2), ("random_cosine", 8)):
        _, _, fmap, _ = build_grid_maze("S..", features=kind, feature_dim=8)
        assert fmap.transform([0, 1, 2]).shape == (3, dim)
    with pytest.raises(ValueError):
        build_grid_maze("S..", features="pixels")
