"""Comparison policies: behavior cloning and its variants, random, count bonus.

``CountBonusPolicy`` is a tabular stand-in for prediction-error exploration
bonuses; it is not a reimplementation of any published RL baseline.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import sample_categorical
from .policy import BehavioralExplorationPolicy


class BehaviorCloning(BaseEstimator):
    """Per-state action-frequency MLE; uniform at states absent from the data."""

    def __init__(self, task_conditioned: bool = False):
        self.task_conditioned = task_conditioned

    def fit(self, dataset, y=None, n_actions: int | None = None, support=None):
        trajs = list(getattr(dataset, "trajectories", dataset))
        if not trajs:
            raise ValueError("dataset is empty")
        if self.task_conditioned and any(t.task is None for t in trajs):
            raise ValueError("task_conditioned=True but some trajectories have no task label")
        self.n_actions_ = int(n_actions or 1 + max(max(t.actions) for t in trajs))
        self.support_ = None if support is None else np.asarray(support, dtype=bool)
        counts: dict = {}
        for t in trajs:
            task = t.task if self.task_conditioned else None
            for s, a in zip(t.states, t.actions):
                row = counts.get((s, task))
                if row is None:
                    row = counts[(s, task)] = np.zeros(self.n_actions_)
                row[a] += 1.0
        self.counts_ = counts
        return self

    def action_proba(self, state: int, task=None) -> np.ndarray:
        check_is_fitted(self, "counts_")
        row = self.counts_.get((int(state), task if self.task_conditioned else None))
        if row is None:
            if self.support_ is not None and state < self.support_.shape[0]:
                allowed = self.support_[state].astype(float)
            else:
                allowed = np.ones(self.n_actions_)
            return allowed / allowed.sum()
        return row / row.sum()


def train_bc(dataset, **kwargs) -> BehaviorCloning:
    return BehaviorCloning(**kwargs).fit(dataset)


class NoisyBehaviorCloning:
    """``(1 - noise) * BC + noise * uniform``, a discrete action-noise analogue."""

    def __init__(self, bc: BehaviorCloning, noise: float):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        check_is_fitted(bc, "counts_")
        self.bc = bc
        self.noise = float(noise)

    def action_proba(self, state: int, task=None) -> np.ndarray:
        base = self.bc.action_proba(state, task)
        return (1.0 - self.noise) * base + self.noise / base.size


def make_bc_noise(bc: BehaviorCloning, noise: float) -> NoisyBehaviorCloning:
    return NoisyBehaviorCloning(bc, noise)


class HistoryBehaviorCloning(BehavioralExplorationPolicy):
    """Behavior cloning keyed on ``(state, history summary)`` only.

    Same sampled histories as :class:`BehavioralExplorationPolicy` but no
    coverage label, so every key lands in a single bucket.
    """

    @property
    def _uses_buckets(self) -> bool:
        return False

    def action_proba(self, state: int, history=(), exp_value="max", task=None, rng=None):
        return super().action_proba(state, history, 0.0, task, rng)


def train_bc_history(dataset, feature_map, context_length: int = 50, **params) -> HistoryBehaviorCloning:
    params.setdefault("n_buckets", 1)
    return HistoryBehaviorCloning(feature_map, context_length=context_length, **params).fit(dataset)


class RandomPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = int(n_actions)

    def action_proba(self, state: int, task=None) -> np.ndarray:
        return np.full(self.n_actions, 1.0 / self.n_actions)


def count_bonus_action(mdp, state: int, visit_counts, bonus: float, rng) -> int:
    """Greedy one-step choice of ``bonus / sqrt(1 + N(next state))``.

    Ties are broken uniformly with ``rng``. Needs a deterministic MDP.
    """
    if bonus <= 0:
        raise ValueError("bonus must be positive")
    counts = np.asarray(visit_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("visit counts must be non-negative")
    succ = np.argmax(mdp.transitions[state], axis=1)
    scores = bonus / np.sqrt(1.0 + counts[succ])
    best = np.flatnonzero(scores >= scores.max())
    return int(best[sample_categorical(np.ones(best.size), rng)])


class CountBonusPolicy:
    """Online count-bonus explorer over next-state visit counts."""

    def __init__(self, mdp, bonus: float = 1.0):
        if not mdp.is_deterministic:
            raise ValueError("the count-bonus policy needs a deterministic MDP")
        self.mdp = mdp
        self.bonus = float(bonus)

    def act(self, state: int, visit_counts, rng) -> int:
        return count_bonus_action(self.mdp, state, visit_counts, self.bonus, rng)
