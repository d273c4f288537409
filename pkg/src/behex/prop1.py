"""Mechanical check that the exact conditional explores optimally on trees.

On a deterministic tree whose leaves carry one-hot directions, the
coverage-maximising conditional of the demonstrator should reach a new
terminal direction in every episode, covering all ``n_beta`` directions in
exactly ``n_beta`` episodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ._rng import check_rng, make_rng, sample_categorical
from .coverage import DEFAULT_LAMBDA
from .envs import build_random_terminal_tree, build_two_goal_tree, terminal_feature_map
from .harness.online import OracleAgent
from .mdp import rollout
from .policy import enumerate_suffixes


@dataclass(frozen=True)
class Prop1Instance:
    mdp: object
    beta: object
    features: object
    n_beta: int
    directions: frozenset
    visitation: dict
    min_w: float
    epsilon: float
    seed: int | None = None
    params: dict | None = None


def compute_terminal_visitation(mdp, beta, budget: int = 10**6) -> dict:
    """``Pr[s_K = s]`` under the demonstrator, by exhaustive path enumeration."""
    out: dict = {}
    for _, prob, path in enumerate_suffixes(mdp, beta, mdp.start_state, 0, budget):
        out[path[-1]] = out.get(path[-1], 0.0) + prob
    return dict(sorted(out.items()))


def make_instance(mdp, beta, features, seed=None, params=None) -> Prop1Instance:
    w = compute_terminal_visitation(mdp, beta)
    w = {s: p for s, p in w.items() if p > 0}
    dirs = frozenset(int(features.directions([s])[0]) for s in w)
    min_w = min(w.values())
    return Prop1Instance(mdp, beta, features, len(dirs), dirs, w, min_w, 0.5 * min_w, seed, params)


def random_instance(n_beta: int, depth: int, branching: int, seed: int, trap: bool = False) -> Prop1Instance:
    mdp, beta, feats = build_random_terminal_tree(n_beta, depth, branching, seed, trap=trap)
    params = {"n_beta": n_beta, "depth": depth, "branching": branching, "trap": trap}
    return make_instance(mdp, beta, feats, seed, params)


def two_goal_instance(p: float, depth: int = 1) -> Prop1Instance:
    mdp, beta = build_two_goal_tree(p, depth)
    return make_instance(mdp, beta, terminal_feature_map(mdp), None, {"p": p, "depth": depth})


def sample_instance_params(master_seed: int, index: int) -> dict:
    """Seeded instance shape with ``n_beta`` in 2..6, depth <= 4, branching <= 3."""
    rng = make_rng(master_seed, "prop1-instance", index)
    n_beta = int(rng.integers(2, 7))
    branching = int(rng.integers(2, 4))
    min_depth = 1
    while branching**min_depth < n_beta:
        min_depth += 1
    depth = int(rng.integers(min_depth, 5))
    trap = bool(rng.integers(0, 2))
    return {"n_beta": n_beta, "depth": depth, "branching": branching, "trap": trap, "seed": int(rng.integers(0, 2**31))}


def verify_prop1(instance: Prop1Instance, rng=None, n_trials: int = 1, lam: float = DEFAULT_LAMBDA) -> dict:
    """Run the exact conditional for ``n_beta`` episodes per trial.

    Success means every episode ends on a terminal direction not seen in
    earlier episodes. Actions outside the demonstrator's support are counted
    in ``support_violations``.
    """
    rng = check_rng(rng)
    agent = OracleAgent(instance.mdp, instance.beta, instance.features, lam)
    trials = []
    violations = 0
    for trial in range(n_trials):
        history: list = []
        covered: set = set()
        episodes = []
        for episode in range(instance.n_beta):
            agent.begin_episode(history, episode, rng)

            def sampler(state, step, context, rng_):
                nonlocal violations
                context["prefix"].append(state)
                probs = agent.proba(state, step, context["prefix"])
                off = ~instance.beta.support(state)
                if np.any(probs[off] > 0):
                    violations += 1
                return sample_categorical(probs, rng_)

            traj = rollout(instance.mdp, sampler, rng, context={"prefix": []})
            terminal = traj.final_state
            direction = int(instance.features.directions([terminal])[0])
            new = direction in instance.directions and direction not in covered
            covered.add(direction)
            episodes.append({"terminal_state": terminal, "direction": direction, "new_direction": bool(new)})
            history.extend(traj.states)
        success = all(e["new_direction"] for e in episodes) and covered == set(instance.directions)
        trials.append({"trial": trial, "success": bool(success), "episodes": episodes})
    return {
        "instance_seed": instance.seed,
        "instance": instance.params,
        "n_beta": instance.n_beta,
        "min_w": instance.min_w,
        "trials": len(trials),
        "successes": sum(t["success"] for t in trials),
        "support_violations": violations,
        "episodes": trials,
    }


def bc_cover_time(instance: Prop1Instance, rng=None, n_trials: int = 1000, max_episodes: int = 10_000) -> np.ndarray:
    """Episodes the demonstrator needs to see every terminal direction.

    Trials that hit ``max_episodes`` report ``max_episodes``.
    """
    rng = check_rng(rng)
    feats = instance.features
    out = np.empty(n_trials, dtype=np.int64)
    for i in range(n_trials):
        seen: set = set()
        n = 0
        while seen != instance.directions and n < max_episodes:
            traj = rollout(instance.mdp, instance.beta, rng)
            seen.add(int(feats.directions([traj.final_state])[0]))
            n += 1
        out[i] = n
    return out


def direction_probabilities(instance: Prop1Instance) -> dict:
    out: dict = {}
    for s, p in instance.visitation.items():
        d = int(instance.features.directions([s])[0])
        out[d] = out.get(d, 0.0) + p
    return out


def expected_cover_time(probs) -> float:
    """Coupon-collector expectation for unequal probabilities (inclusion-exclusion)."""
    probs = [float(p) for p in probs if p > 0]
    total = 0.0
    for k in range(1, len(probs) + 1):
        sign = 1.0 if k % 2 else -1.0
        for subset in combinations(probs, k):
            total += sign / sum(subset)
    return total
