"""Concrete environments: the two-goal tree, random terminal trees and grid mazes.

Maze layouts are text grids::

    #####
    #S.G#
    #.#.#
    #..G#
    #####

``#`` is a wall, ``.`` a free cell, ``S`` the start, ``G`` a goal and a digit
a free cell assigned to that region id. Cells without a digit fall into the
square block partition of side ``region_block``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._rng import check_rng
from .coverage import IdentityFeatures, OneHotFeatures, RandomCosineFeatures
from .mdp import BehaviorPolicy, TabularMdp


def terminal_feature_map(mdp: TabularMdp) -> OneHotFeatures:
    """Terminal states get their own directions, every other state the last one."""
    term = np.flatnonzero(mdp.terminal)
    index = np.full(mdp.n_states, len(term), dtype=np.int64)
    index[term] = np.arange(len(term))
    return OneHotFeatures(len(term) + 1, tuple(int(i) for i in index))


def build_two_goal_tree(p: float, depth: int = 1) -> tuple[TabularMdp, BehaviorPolicy]:
    """Root ``s0`` with two deterministic chains of length ``depth``.

    Action 0 at the root leads towards ``g1`` (state ``depth``), action 1
    towards ``g2`` (state ``2 * depth``). The demonstrator takes action 1 at
    the root with probability ``p`` and action 0 everywhere else.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie strictly between 0 and 1, got {p}")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    n = 2 * depth + 1
    trans = np.zeros((n, 2, n))
    trans[0, 0, 1] = 1.0
    trans[0, 1, depth + 1] = 1.0
    for branch_start in (1, depth + 1):
        goal = branch_start + depth - 1
        for s in range(branch_start, goal):
            trans[s, :, s + 1] = 1.0
        trans[goal, :, goal] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[[depth, 2 * depth]] = True
    p0 = np.zeros(n)
    p0[0] = 1.0
    table = np.zeros((n, 2))
    table[:, 0] = 1.0
    table[0] = (1.0 - p, p)
    mdp = TabularMdp(trans, p0, depth, terminal, name=f"two-goal-tree(p={p}, depth={depth})")
    return mdp, BehaviorPolicy(table)


def build_random_terminal_tree(
    n_beta: int,
    depth: int,
    branching: int,
    seed: int = 0,
    trap: bool = False,
    min_branch_prob: float = 0.05,
) -> tuple[TabularMdp, BehaviorPolicy, OneHotFeatures]:
    """Deterministic tree whose leaves carry ``n_beta`` one-hot directions.

    Internal nodes have ``branching`` children; leaves sit at ``depth`` and
    are absorbing. The demonstrator draws seeded random branch probabilities,
    each at least ``min_branch_prob / branching``, so every leaf has positive
    probability. With ``trap=True`` every internal node gets one extra
    action, never taken by the demonstrator, that jumps to an absorbing trap
    state with a direction of its own.

    Feature directions: leaves use ``0..n_beta-1``, the trap (if any)
    ``n_beta``, and all non-terminal states the last direction.
    """
    if n_beta < 1 or depth < 1 or branching < 1:
        raise ValueError("n_beta, depth and branching must be positive")
    n_leaves = branching**depth
    if n_leaves < n_beta:
        raise ValueError(f"{branching}^{depth} = {n_leaves} leaves cannot carry {n_beta} directions")
    rng = check_rng(seed)
    n_internal = sum(branching**i for i in range(depth))
    n_tree = n_internal + n_leaves
    n_states = n_tree + (1 if trap else 0)
    n_actions = branching + (1 if trap else 0)
    trans = np.zeros((n_states, n_actions, n_states))
    table = np.zeros((n_states, n_actions))
    for node in range(n_internal):
        for j in range(branching):
            trans[node, j, node * branching + j + 1] = 1.0
        probs = min_branch_prob / branching + (1 - min_branch_prob) * rng.dirichlet(np.ones(branching))
        table[node, :branching] = probs / probs.sum()
        if trap:
            trans[node, branching, n_tree] = 1.0
    for s in range(n_internal, n_states):
        trans[s, :, s] = 1.0
        table[s, 0] = 1.0
    terminal = np.zeros(n_states, dtype=bool)
    terminal[n_internal:] = True

    leaf_dirs = np.empty(n_leaves, dtype=np.int64)
    order = rng.permutation(n_leaves)
    leaf_dirs[order[:n_beta]] = np.arange(n_beta)
    leaf_dirs[order[n_beta:]] = rng.integers(0, n_beta, size=n_leaves - n_beta)
    d = n_beta + (1 if trap else 0) + 1
    index = np.full(n_states, d - 1, dtype=np.int64)
    index[n_internal:n_tree] = leaf_dirs
    if trap:
        index[n_tree] = n_beta
    p0 = np.zeros(n_states)
    p0[0] = 1.0
    name = f"random-terminal-tree(n_beta={n_beta}, depth={depth}, branching={branching}, seed={seed})"
    mdp = TabularMdp(trans, p0, depth, terminal, name=name)
    features = OneHotFeatures(d, tuple(int(i) for i in index))
    return mdp, BehaviorPolicy(table), features


# --------------------------------------------------------------------------
# grid mazes

UP, RIGHT, DOWN, LEFT = range(4)
_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class GridMaze:
    height: int
    width: int
    cells: tuple
    start: int
    goals: tuple
    regions: tuple
    walls: frozenset = field(default_factory=frozenset)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_regions(self) -> int:
        return len(set(self.regions))

    def state_of(self, row: int, col: int) -> int:
        return self.cells.index((row, col))


def parse_layout(text: str, region_block: int = 1) -> GridMaze:
    rows = [ln.rstrip("\n") for ln in text.strip("\n").splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty layout")
    height, width = len(rows), max(len(r) for r in rows)
    rows = [r.ljust(width, "#") for r in rows]
    cells, walls, goals, raw_regions = [], set(), [], []
    start = None
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
                continue
            if ch not in ".SG0123456789":
                raise ValueError(f"unknown layout character {ch!r} at row {r}, column {c}")
            sid = len(cells)
            cells.append((r, c))
            if ch == "S":
                if start is not None:
                    raise ValueError("layout has more than one start cell")
                start = sid
            elif ch == "G":
                goals.append(sid)
            raw_regions.append(("digit", int(ch)) if ch.isdigit() else ("block", r // region_block, c // region_block))
    if start is None:
        raise ValueError("layout has no start cell 'S'")
    labels = {}
    regions = tuple(labels.setdefault(key, len(labels)) for key in raw_regions)
    return GridMaze(height, width, tuple(cells), start, tuple(goals), regions, frozenset(walls))


def _grid_transitions(maze: GridMaze, absorbing: set) -> np.ndarray:
    n = maze.n_cells
    lookup = {cell: i for i, cell in enumerate(maze.cells)}
    trans = np.zeros((n, 4, n))
    for s, (r, c) in enumerate(maze.cells):
        for a, (dr, dc) in enumerate(_MOVES):
            nxt = s if s in absorbing else lookup.get((r + dr, c + dc), s)
            trans[s, a, nxt] = 1.0
    return trans


def _distances_to(maze: GridMaze, target: int) -> np.ndarray:
    lookup = {cell: i for i, cell in enumerate(maze.cells)}
    dist = np.full(maze.n_cells, -1, dtype=np.int64)
    dist[target] = 0
    queue = deque([target])
    while queue:
        s = queue.popleft()
        r, c = maze.cells[s]
        for dr, dc in _MOVES:
            nb = lookup.get((r + dr, c + dc))
            if nb is not None and dist[nb] < 0:
                dist[nb] = dist[s] + 1
                queue.append(nb)
    return dist


def shortest_path_table(maze: GridMaze, goal: int) -> np.ndarray:
    """Uniform over moves that reduce the BFS distance to ``goal``.

    At the goal itself (and at cells that cannot reach it) the row is
    uniform over all four moves.
    """
    dist = _distances_to(maze, goal)
    lookup = {cell: i for i, cell in enumerate(maze.cells)}
    table = np.full((maze.n_cells, 4), 0.25)
    for s, (r, c) in enumerate(maze.cells):
        if s == goal or dist[s] < 0:
            continue
        good = []
        for a, (dr, dc) in enumerate(_MOVES):
            nb = lookup.get((r + dr, c + dc))
            if nb is not None and dist[nb] == dist[s] - 1:
                good.append(a)
        table[s] = 0.0
        table[s, good] = 1.0 / len(good)
    return table


def build_grid_maze(
    layout: str | GridMaze,
    goal_weights=None,
    horizon: int = 40,
    region_block: int = 1,
    absorbing_goals: bool = True,
    features: str = "onehot",
    feature_dim: int = 16,
    feature_seed: int = 0,
):
    """Maze MDP with four moves; blocked moves stay in place.

    The demonstrator is a mixture of shortest-path-to-goal policies with
    ``goal_weights`` (uniform by default), one goal per episode, or the
    uniform random policy when the layout has no goals.

    Returns
    -------
    mdp, beta, feature_map, maze
        ``maze.regions[s]`` is the region id of state ``s``.
    """
    maze = layout if isinstance(layout, GridMaze) else parse_layout(layout, region_block)
    absorbing = set(maze.goals) if absorbing_goals else set()
    trans = _grid_transitions(maze, absorbing)
    terminal = np.zeros(maze.n_cells, dtype=bool)
    terminal[list(absorbing)] = True
    p0 = np.zeros(maze.n_cells)
    p0[maze.start] = 1.0
    mdp = TabularMdp(trans, p0, horizon, terminal, name="grid-maze")

    if maze.goals:
        from_start = _distances_to(maze, maze.start)
        for g in maze.goals:
            if from_start[g] < 0:
                r, c = maze.cells[g]
                raise ValueError(f"goal at row {r}, column {c} is unreachable from the start")
        if goal_weights is None:
            goal_weights = np.full(len(maze.goals), 1.0 / len(maze.goals))
        goal_weights = np.asarray(goal_weights, dtype=float)
        if goal_weights.shape != (len(maze.goals),):
            raise ValueError(f"expected {len(maze.goals)} goal weights, got {goal_weights.shape}")
        goal_weights = goal_weights / goal_weights.sum()
        beta = BehaviorPolicy(np.stack([shortest_path_table(maze, g) for g in maze.goals]), goal_weights)
    else:
        beta = BehaviorPolicy(np.full((maze.n_cells, 4), 0.25))

    coords = np.asarray(maze.cells, dtype=float)
    if features == "onehot":
        fmap = OneHotFeatures(maze.n_cells)
    elif features == "identity":
        fmap = IdentityFeatures(2, coords=coords)
    elif features == "random_cosine":
        fmap = RandomCosineFeatures(feature_dim, 2, feature_seed, coords=coords).fit()
    else:
        raise ValueError(f"unknown feature kind {features!r}")
    return mdp, beta, fmap, maze
