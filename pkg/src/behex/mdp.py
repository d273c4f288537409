"""Reward-free tabular MDPs, trajectories, behavior policies and datasets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import check_rng, sample_categorical
from .exceptions import ContractViolation

_ATOL = 1e-12


def _readonly(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """``(S, A, P, p0)`` with a fixed horizon ``K``.

    ``transitions[s, a]`` is the next-state distribution. Terminal states are
    expected to be absorbing; ``terminal`` flags which states count as
    episode endpoints.
    """

    transitions: np.ndarray
    initial_dist: np.ndarray
    horizon: int
    terminal: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        p = _readonly(self.transitions)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {p.shape}")
        p0 = _readonly(self.initial_dist)
        if p0.shape != (p.shape[0],):
            raise ValueError("initial_dist length must equal the number of states")
        if np.any(p < 0) or np.any(p0 < 0):
            raise ValueError("probabilities must be non-negative")
        if not np.allclose(p.sum(axis=2), 1.0, rtol=0, atol=_ATOL):
            raise ValueError("every transition row must sum to 1")
        if abs(p0.sum() - 1.0) > _ATOL:
            raise ValueError("initial_dist must sum to 1")
        if int(self.horizon) < 0:
            raise ValueError("horizon must be non-negative")
        term = np.zeros(p.shape[0], dtype=bool) if self.terminal is None else self.terminal
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "terminal", _readonly(term, dtype=bool))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.transitions.max(axis=2), 1.0, rtol=0, atol=_ATOL)))

    def successor(self, state: int, action: int) -> int:
        """Unique next state; only meaningful for deterministic MDPs."""
        return int(np.argmax(self.transitions[state, action]))

    @property
    def start_state(self) -> int:
        return int(np.argmax(self.initial_dist))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.transitions.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.transitions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.initial_dist, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.terminal, dtype="u1").tobytes())
        h.update(str(self.horizon).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    actions: tuple
    task: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))

    def __len__(self):
        return len(self.states)

    @property
    def final_state(self) -> int:
        return self.states[-1]


class BehaviorPolicy:
    """Markov demonstrator, or a mixture of Markov demonstrators.

    A mixture draws one component per episode (recorded as the trajectory's
    task label) and follows it for the whole episode.

    Parameters
    ----------
    tables : array of shape (S, A) or (C, S, A)
        Action distributions per state (per component).
    weights : array of shape (C,), optional
        Mixture weights; uniform when omitted.
    """

    def __init__(self, tables, weights=None):
        tables = np.asarray(tables, dtype=float)
        if tables.ndim == 2:
            tables = tables[None]
        if tables.ndim != 3:
            raise ValueError("tables must have shape (S, A) or (C, S, A)")
        if np.any(tables < 0) or not np.allclose(tables.sum(axis=2), 1.0, rtol=0, atol=_ATOL):
            raise ValueError("every policy row must be a probability vector")
        if weights is None:
            weights = np.full(tables.shape[0], 1.0 / tables.shape[0])
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (tables.shape[0],) or np.any(weights < 0) or abs(weights.sum() - 1) > _ATOL:
            raise ValueError("weights must be a probability vector over components")
        self.tables = _readonly(tables)
        self.weights = _readonly(weights)

    @property
    def n_components(self) -> int:
        return self.tables.shape[0]

    @property
    def table(self) -> np.ndarray:
        """Weight-averaged action table (exact for a single component)."""
        return np.tensordot(self.weights, self.tables, axes=1)

    def support(self, state: int) -> np.ndarray:
        active = self.weights > 0
        return np.any(self.tables[active, state] > 0, axis=0)

    def begin_episode(self, context: dict, rng: np.random.Generator) -> None:
        if self.n_components > 1:
            context["task"] = sample_categorical(self.weights, rng)

    def __call__(self, state: int, step: int, context: dict, rng: np.random.Generator) -> int:
        return sample_categorical(self.tables[context.get("task", 0), state], rng)


Sampler = Callable[[int, int, dict, np.random.Generator], int]


def rollout(mdp: TabularMdp, policy: Sampler, rng=None, context: dict | None = None) -> Trajectory:
    """Sample ``s0 ~ p0`` then alternate action and transition draws for K steps.

    ``policy(state, step, context, rng)`` must return an action id. If the
    sampler has a ``begin_episode(context, rng)`` method it is called first.
    The trajectory holds K+1 states and K+1 actions.
    """
    rng = check_rng(rng)
    context = {} if context is None else context
    begin = getattr(policy, "begin_episode", None)
    if begin is not None:
        begin(context, rng)
    state = sample_categorical(mdp.initial_dist, rng)
    states, actions = [state], []
    for step in range(mdp.horizon + 1):
        action = policy(state, step, context, rng)
        if not isinstance(action, (int, np.integer)) or not 0 <= action < mdp.n_actions:
            raise ContractViolation(f"policy returned invalid action {action!r} at step {step}")
        actions.append(int(action))
        if step == mdp.horizon:
            break
        state = sample_categorical(mdp.transitions[state, action], rng)
        states.append(state)
    return Trajectory(states, actions, context.get("task"))


@dataclass(frozen=True)
class Violation:
    step: int
    message: str

    def __str__(self):
        return f"step {self.step}: {self.message}"


def validate_trajectory(mdp: TabularMdp, traj: Trajectory) -> list[Violation]:
    """Every inconsistency between ``traj`` and ``mdp``; empty when valid."""
    out: list[Violation] = []
    k = mdp.horizon
    if len(traj.states) != k + 1:
        out.append(Violation(0, f"expected {k + 1} states, got {len(traj.states)}"))
    if len(traj.actions) != k + 1:
        out.append(Violation(0, f"expected {k + 1} actions, got {len(traj.actions)}"))
    for i, s in enumerate(traj.states):
        if not 0 <= s < mdp.n_states:
            out.append(Violation(i, f"state {s} out of range"))
    for i, a in enumerate(traj.actions):
        if not 0 <= a < mdp.n_actions:
            out.append(Violation(i, f"action {a} out of range"))
    if out:
        return out
    if traj.states and mdp.initial_dist[traj.states[0]] <= 0:
        out.append(Violation(0, f"initial state {traj.states[0]} has zero probability"))
    det = mdp.is_deterministic
    for i in range(len(traj.states) - 1):
        s, a, nxt = traj.states[i], traj.actions[i], traj.states[i + 1]
        if det:
            expected = mdp.successor(s, a)
            if nxt != expected:
                out.append(Violation(i + 1, f"successor of ({s}, {a}) is {expected}, got {nxt}"))
        elif mdp.transitions[s, a, nxt] <= 0:
            out.append(Violation(i + 1, f"transition ({s}, {a}) -> {nxt} has zero probability"))
    return out


@dataclass(frozen=True)
class DemoDataset:
    trajectories: tuple
    mdp_fingerprint: str
    seed: Optional[int]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def has_tasks(self) -> bool:
        return all(t.task is not None for t in self.trajectories)

    def to_lines(self) -> list[str]:
        header = {"horizon": self.horizon, "mdp_fingerprint": self.mdp_fingerprint, "seed": self.seed}
        lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
        for t in self.trajectories:
            rec = {"actions": list(t.actions), "states": list(t.states)}
            if t.task is not None:
                rec["task"] = t.task
            lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
        return lines

    def dump(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "DemoDataset":
        lines = [ln for ln in lines if ln.strip()]
        if not lines:
            raise ValueError("dataset file is empty")
        header = json.loads(lines[0])
        trajs = []
        for ln in lines[1:]:
            rec = json.loads(ln)
            trajs.append(Trajectory(rec["states"], rec["actions"], rec.get("task")))
        return cls(tuple(trajs), header["mdp_fingerprint"], header.get("seed"), int(header["horizon"]))

    @classmethod
    def load(cls, path) -> "DemoDataset":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())


def generate_dataset(mdp: TabularMdp, beta: BehaviorPolicy, n_traj: int, rng=None, seed=None) -> DemoDataset:
    """``n_traj`` independent rollouts of ``beta``.

    ``rng`` may be a Generator or an integer seed; the integer (or ``seed``)
    is recorded in the dataset header.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if seed is None and isinstance(rng, (int, np.integer)):
        seed = int(rng)
    rng = check_rng(rng)
    trajs = tuple(rollout(mdp, beta, rng) for _ in range(n_traj))
    return DemoDataset(trajs, mdp.fingerprint(), seed, mdp.horizon)
