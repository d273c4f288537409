"""Online deployment: agents, the episode loop and per-step metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .._rng import check_rng, sample_categorical
from ..baselines import CountBonusPolicy
from ..coverage import DEFAULT_LAMBDA, CoverageAccumulator
from ..exceptions import ContractViolation
from ..mdp import rollout, validate_trajectory
from ..policy import conditional_from_statistics, history_statistic, suffix_statistics

METRIC_COLUMNS = ("step", "episode", "state", "action", "coverage", "coverage_beta", "goals_reached", "regions_reached")
DEPLOY_MODES = ("online", "first_state", "none")


# --------------------------------------------------------------------------
# agents


class Agent:
    """Per-episode interface used by :func:`run_online`.

    ``history`` passed to :meth:`begin_episode` is the list of states from all
    previous episodes; ``prefix`` passed to :meth:`act` holds the states of
    the current episode so far, ending with ``state``.
    """

    name = "agent"
    # whether sampled actions must lie in the demonstrator's support
    restricted = False

    def begin_episode(self, history: list, episode: int, rng) -> None:
        pass

    def act(self, state: int, step: int, prefix: list, rng) -> int:
        raise NotImplementedError


class TableAgent(Agent):
    """Memoryless policy exposing ``action_proba(state)``."""

    def __init__(self, policy, name: str, restricted: bool = False):
        self.policy = policy
        self.name = name
        self.restricted = restricted

    def act(self, state, step, prefix, rng):
        return sample_categorical(self.policy.action_proba(state), rng)


class ExplorationAgent(Agent):
    """Deploys a conditional policy with a per-episode exp value and history mode.

    ``mode="online"`` conditions on every past state, ``"first_state"`` only
    on the first state ever visited, and ``"none"`` queries the marginal
    behavior-cloning head. The summary is refreshed at episode start.
    """

    restricted = True

    def __init__(self, policy, exp_schedule="max", mode: str = "online", name: str = "be"):
        if mode not in DEPLOY_MODES:
            raise ValueError(f"unknown deployment mode {mode!r}")
        self.policy = policy
        self.exp_schedule = exp_schedule
        self.mode = mode
        self.name = name
        self.fallbacks: dict = {}

    def _exp_for(self, episode: int):
        sched = self.exp_schedule
        if isinstance(sched, (list, tuple)):
            if episode >= len(sched):
                raise ValueError(f"exp schedule has {len(sched)} entries, episode {episode} requested")
            return sched[episode]
        return sched

    def begin_episode(self, history, episode, rng):
        raw = history if self.mode == "online" else history[:1]
        self._summary = self.policy.summarize(raw, rng)
        self._bucket = self.policy.resolve_bucket(self._exp_for(episode))

    def act(self, state, step, prefix, rng):
        if self.mode == "none":
            probs, level = self.policy.bc_proba(state), "bc"
        else:
            probs, level = self.policy.lookup(state, self._summary, self._bucket)
        self.fallbacks[level] = self.fallbacks.get(level, 0) + 1
        return sample_categorical(probs, rng)


class CountBonusAgent(Agent):
    def __init__(self, mdp, bonus: float = 1.0, name: str = "count_bonus"):
        self.policy = CountBonusPolicy(mdp, bonus)
        self.name = name
        self._counts = np.zeros(mdp.n_states)

    def begin_episode(self, history, episode, rng):
        self._counts = np.bincount(np.asarray(history, dtype=np.int64), minlength=self.policy.mdp.n_states).astype(float)
        self._seen = 0

    def act(self, state, step, prefix, rng):
        for s in prefix[self._seen:]:
            self._counts[s] += 1
        self._seen = len(prefix)
        return self.policy.act(state, self._counts, rng)


class OracleAgent(Agent):
    """Samples from the exact coverage-maximising conditional at every step."""

    restricted = True

    def __init__(self, mdp, beta, feature_map, lam: float = DEFAULT_LAMBDA, budget: int = 10**6, name: str = "oracle"):
        self.mdp, self.beta, self.feature_map = mdp, beta, feature_map
        self.lam, self.budget, self.name = lam, budget, name
        self._cache: dict = {}

    def begin_episode(self, history, episode, rng):
        self._history = list(history)

    def proba(self, state: int, step: int, prefix: Sequence[int]) -> np.ndarray:
        key = (state, step)
        if key not in self._cache:
            self._cache[key] = suffix_statistics(self.mdp, self.beta, self.feature_map, state, step, self.budget)
        first, probs, stats = self._cache[key]
        hist = history_statistic(self._history + list(prefix[:-1]), self.feature_map)
        return conditional_from_statistics(first, probs, stats, hist, self.lam, self.mdp.n_actions)

    def act(self, state, step, prefix, rng):
        return sample_categorical(self.proba(state, step, prefix), rng)


# --------------------------------------------------------------------------
# metrics


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        i = METRIC_COLUMNS.index(name)
        return np.asarray([r[i] for r in self.rows])

    def final(self, name: str):
        return self.rows[-1][METRIC_COLUMNS.index(name)] if self.rows else 0

    def episode_final(self, name: str) -> np.ndarray:
        """Value of ``name`` at the last step of every episode."""
        ep = self.column("episode")
        vals = self.column(name)
        last = np.flatnonzero(np.r_[ep[1:] != ep[:-1], True])
        return vals[last]

    def to_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow([r[0], r[1], r[2], r[3], f"{r[4]:.12g}", f"{r[5]:.12g}", r[6], r[7]])

    @classmethod
    def from_csv(cls, path) -> "MetricsLog":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != METRIC_COLUMNS:
                raise ValueError(f"unexpected metrics header {header}")
            rows = [
                (int(r[0]), int(r[1]), int(r[2]), int(r[3]), float(r[4]), float(r[5]), int(r[6]), int(r[7]))
                for r in reader
            ]
        return cls(rows)


def run_online(
    mdp,
    agent: Agent,
    n_episodes: int,
    rng=None,
    feature_map=None,
    lam: float = DEFAULT_LAMBDA,
    subspace=None,
    regions=None,
    goals=(),
    beta=None,
) -> MetricsLog:
    """Roll out ``n_episodes`` consecutive episodes, carrying the full history.

    Metrics are logged for every visited state. When ``beta`` is given and the
    agent is support-restricted, every sampled action is checked against the
    demonstrator's support; the count of violations is kept in
    ``log.metadata["support_violations"]``.
    """
    rng = check_rng(rng)
    regions = np.arange(mdp.n_states) if regions is None else np.asarray(regions)
    goals = set(int(g) for g in goals)
    acc = CoverageAccumulator(feature_map.dim, lam) if feature_map is not None else None
    acc_beta = CoverageAccumulator(subspace.rank, lam) if subspace is not None else None
    history: list = []
    seen_regions: set = set()
    seen_goals: set = set()
    violations = 0
    log = MetricsLog(metadata={"agent": agent.name, "n_episodes": n_episodes, "horizon": mdp.horizon})
    step_index = 0

    def sampler(state, step, context, rng_):
        nonlocal violations
        context["prefix"].append(state)
        action = agent.act(state, step, context["prefix"], rng_)
        if beta is not None and agent.restricted and not beta.support(state)[action]:
            violations += 1
        return action

    for episode in range(n_episodes):
        agent.begin_episode(history, episode, rng)
        traj = rollout(mdp, sampler, rng, context={"prefix": []})
        problems = validate_trajectory(mdp, traj)
        if problems:
            raise ContractViolation(f"episode {episode}: " + "; ".join(map(str, problems)))
        feats = feature_map.transform(list(traj.states)) if feature_map is not None else None
        for k, (s, a) in enumerate(zip(traj.states, traj.actions)):
            cov = cov_b = float("nan")
            if acc is not None:
                acc.add(feats[k])
                cov = acc.coverage()
                if acc_beta is not None:
                    acc_beta.add(subspace.basis.T @ feats[k])
                    cov_b = acc_beta.coverage()
            seen_regions.add(int(regions[s]))
            if s in goals:
                seen_goals.add(s)
            log.rows.append((step_index, episode, s, a, cov, cov_b, len(seen_goals), len(seen_regions)))
            step_index += 1
        history.extend(traj.states)
    log.metadata["support_violations"] = violations
    return log
