"""History- and coverage-conditioned behavioral exploration policies.

Training is a tabular conditional maximum-likelihood fit: every demonstrated
``(state, action)`` pair is paired with ``n_histories`` sampled histories,
labelled with the coverage of ``history + remaining trajectory``, and
counted under the key ``(state, history summary, coverage bucket[, task])``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import check_rng, make_rng, sample_categorical
from .coverage import (
    DEFAULT_LAMBDA,
    CoverageAccumulator,
    feature_map_from_dict,
    feature_map_to_dict,
    finite_state_coverage,
    is_one_hot,
)
from .exceptions import EnumerationBudgetError

HISTORY_MODES = ("counts", "downsampled", "first_state", "empty")
PAD_STATE = -1
FORMAT_VERSION = 1
TIE_TOL = 1e-12


def round_sig(x: float, digits: int = 12) -> float:
    return float(f"{float(x):.{digits}g}")


# --------------------------------------------------------------------------
# history summaries


@dataclass(frozen=True)
class HistorySummary:
    """Hashable, fixed-size statistic of a state history."""

    mode: str
    payload: tuple = ()


def summarize_history(
    states: Sequence[int],
    mode: str = "counts",
    feature_map=None,
    cap: int = 3,
    context_length: int = 50,
    rng=None,
) -> HistorySummary:
    """Summarise a raw state history.

    ``counts`` needs a one-hot feature map and keeps per-direction visit
    counts capped at ``cap``. ``downsampled`` keeps a sorted multiset of
    ``context_length`` states drawn without replacement (padded with
    ``PAD_STATE`` when the history is shorter).
    """
    if mode == "counts":
        if not is_one_hot(feature_map):
            raise ValueError("the 'counts' summary needs a one-hot feature map")
        counts = np.zeros(feature_map.dim, dtype=np.int64)
        if len(states):
            counts = np.bincount(feature_map.directions(states), minlength=feature_map.dim)
        return HistorySummary(mode, tuple(int(c) for c in np.minimum(counts, cap)))
    if mode == "downsampled":
        states = [int(s) for s in states]
        if len(states) > context_length:
            rng = check_rng(rng)
            pick = rng.choice(len(states), size=context_length, replace=False)
            states = [states[i] for i in pick]
        payload = sorted(states) + [PAD_STATE] * (context_length - len(states))
        return HistorySummary(mode, tuple(payload))
    if mode == "first_state":
        return HistorySummary(mode, (int(states[0]),) if len(states) else ())
    if mode == "empty":
        return HistorySummary(mode, ())
    raise ValueError(f"unknown history mode {mode!r}; expected one of {HISTORY_MODES}")


# --------------------------------------------------------------------------
# coverage buckets


@dataclass(frozen=True)
class CoverageBucket:
    """Quantile discretisation of coverage-to-go values.

    Bucket ``b`` holds values in ``(edges[b], edges[b + 1]]``; values beyond
    either end are clamped into the first or last bucket.
    """

    edges: tuple

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bucket edges must be at least two strictly increasing values")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def fit(cls, labels, n_buckets: int) -> "CoverageBucket":
        """Quantile edges of ``labels``; tied quantiles collapse into one edge."""
        labels = np.asarray(labels, dtype=float)
        if labels.size == 0:
            raise ValueError("cannot fit buckets on no labels")
        if n_buckets < 1:
            raise ValueError("n_buckets must be positive")
        qs = np.quantile(labels, np.linspace(0.0, 1.0, n_buckets + 1), method="inverted_cdf")
        edges = sorted({round_sig(q) for q in qs})
        if len(edges) == 1:
            edges = [round_sig(np.nextafter(edges[0], -np.inf) - 1e-9 * max(1.0, abs(edges[0]))), edges[0]]
        return cls(tuple(edges))

    @property
    def n_buckets(self) -> int:
        return len(self.edges) - 1

    def bucket(self, value: float) -> int:
        inner = np.asarray(self.edges[1:-1])
        return int(np.count_nonzero(inner < value))

    def buckets(self, values) -> np.ndarray:
        inner = np.asarray(self.edges[1:-1])
        return np.searchsorted(inner, np.asarray(values, dtype=float), side="left").astype(np.int64)

    def representative(self, b: int) -> float:
        """A value that falls in bucket ``b`` (its upper edge)."""
        return self.edges[int(b) + 1]


# --------------------------------------------------------------------------
# the estimator


def _normalise(counts: np.ndarray, alpha: float, allowed: np.ndarray) -> np.ndarray:
    row = np.where(allowed, counts + alpha, 0.0)
    return row / row.sum()


class BehavioralExplorationPolicy(BaseEstimator):
    """Tabular ``pi(a | s, history summary, coverage bucket[, task])``.

    Parameters
    ----------
    feature_map : feature map
        Used for coverage labels and for ``counts`` summaries.
    reg : float, default=0.01
        Coverage regulariser lambda.
    n_histories : int, default=4
        Histories sampled per demonstrated (trajectory, step) pair.
    n_buckets : int, default=8
        Requested number of quantile buckets (ties may merge some).
    smoothing : float, default=0.0
        Laplace pseudo-count, spread over actions demonstrated at the state.
    history_mode : {"counts", "downsampled", "first_state", "empty"}
    count_cap : int, default=3
    context_length : int, default=50
    min_history_trajectories, max_history_trajectories : int, default=1
        Each sampled history is the union of ``j`` trajectories drawn
        uniformly from the dataset, ``j`` uniform on this range.
    future_length : int, optional
        Truncate the remaining trajectory to this many states when labelling.
    task_conditioned : bool, default=False
        Append the trajectory task label to every key.
    random_state : int, default=0
    """

    def __init__(
        self,
        feature_map=None,
        reg: float = DEFAULT_LAMBDA,
        n_histories: int = 4,
        n_buckets: int = 8,
        smoothing: float = 0.0,
        history_mode: str = "counts",
        count_cap: int = 3,
        context_length: int = 50,
        min_history_trajectories: int = 1,
        max_history_trajectories: int = 1,
        future_length: int | None = None,
        task_conditioned: bool = False,
        random_state: int = 0,
    ):
        self.feature_map = feature_map
        self.reg = reg
        self.n_histories = n_histories
        self.n_buckets = n_buckets
        self.smoothing = smoothing
        self.history_mode = history_mode
        self.count_cap = count_cap
        self.context_length = context_length
        self.min_history_trajectories = min_history_trajectories
        self.max_history_trajectories = max_history_trajectories
        self.future_length = future_length
        self.task_conditioned = task_conditioned
        self.random_state = random_state

    # ---------------------------------------------------------------- fit

    def _validate(self, dataset, n_actions):
        if self.feature_map is None:
            raise ValueError("feature_map is required")
        if self.history_mode not in HISTORY_MODES:
            raise ValueError(f"unknown history_mode {self.history_mode!r}")
        if self.n_histories < 1:
            raise ValueError("n_histories must be at least 1")
        if not 0 <= self.min_history_trajectories <= self.max_history_trajectories:
            raise ValueError("need 0 <= min_history_trajectories <= max_history_trajectories")
        if self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        trajs = list(getattr(dataset, "trajectories", dataset))
        if not trajs:
            raise ValueError("dataset is empty")
        if self.task_conditioned and any(t.task is None for t in trajs):
            raise ValueError("task_conditioned=True but some trajectories have no task label")
        if n_actions is None:
            n_actions = 1 + max(max(t.actions) for t in trajs)
        return trajs, int(n_actions)

    def fit(self, dataset, y=None, n_actions: int | None = None, support=None):
        """Fit the conditional table from a :class:`~behex.mdp.DemoDataset`.

        ``support`` (optional, shape (S, A) boolean) restricts the uniform
        fallback at states absent from the data.
        """
        trajs, n_actions = self._validate(dataset, n_actions)
        rng = make_rng(self.random_state, "train")
        fmap = self.feature_map
        one_hot = is_one_hot(fmap)
        lam = float(self.reg)
        n = len(trajs)

        full_stats, suffix_stats = [], []
        for t in trajs:
            states = list(t.states)
            if one_hot:
                dirs = fmap.directions(states)
                onehots = np.zeros((len(states), fmap.dim))
                onehots[np.arange(len(states)), dirs] = 1.0
                full_stats.append(onehots.sum(axis=0))
                suffix_stats.append(self._suffix_sums(onehots))
            else:
                feats = fmap.transform(states)
                outer = feats[:, :, None] * feats[:, None, :]
                full_stats.append(outer.sum(axis=0))
                suffix_stats.append(self._suffix_sums(outer))

        lo, hi = int(self.min_history_trajectories), int(self.max_history_trajectories)
        rec_state, rec_action, rec_task, rec_summary, rec_label = [], [], [], [], []
        summary_ids: dict = {}
        needs_labels = self._uses_buckets
        for ti, t in enumerate(trajs):
            n_steps = len(t.states)
            for _ in range(self.n_histories):
                j = int(rng.integers(lo, hi + 1))
                picks = rng.integers(0, n, size=j)
                hist_stat = sum((full_stats[p] for p in picks), np.zeros_like(full_stats[0]))
                summary = self._training_summary(trajs, picks, hist_stat, rng)
                sid = summary_ids.setdefault(summary, len(summary_ids))
                if needs_labels:
                    total = hist_stat[None] + suffix_stats[ti]
                    if one_hot:
                        labels = finite_state_coverage(total, lam)
                    else:
                        eye = lam * np.eye(fmap.dim)
                        labels = 1.0 / np.trace(np.linalg.inv(total + eye), axis1=1, axis2=2)
                else:
                    labels = np.zeros(n_steps)
                rec_state.extend(t.states)
                rec_action.extend(t.actions)
                rec_task.extend([t.task if self.task_conditioned else None] * n_steps)
                rec_summary.extend([sid] * n_steps)
                rec_label.append(labels)

        labels = np.concatenate(rec_label)
        self.bucketizer_ = (
            CoverageBucket.fit(labels, self.n_buckets) if needs_labels else CoverageBucket((0.0, 1.0))
        )
        buckets = self.bucketizer_.buckets(labels)

        # canonical summary ids: sorted by payload
        by_old = sorted(summary_ids, key=lambda s: s.payload)
        remap = np.empty(len(by_old), dtype=np.int64)
        for new_id, s in enumerate(by_old):
            remap[summary_ids[s]] = new_id
        self.summaries_ = tuple(by_old)
        self._summary_index = {s: i for i, s in enumerate(by_old)}
        sids = remap[np.asarray(rec_summary, dtype=np.int64)]

        counts: dict = {}
        for s, a, task, sid, b in zip(rec_state, rec_action, rec_task, sids.tolist(), buckets.tolist()):
            key = (s, sid, b, task)
            row = counts.get(key)
            if row is None:
                row = counts[key] = np.zeros(n_actions)
            row[a] += 1.0
        self.n_actions_ = n_actions
        self.n_states_ = int(support.shape[0]) if support is not None else 1 + max(max(t.states) for t in trajs)
        self.support_ = None if support is None else np.asarray(support, dtype=bool)
        self._set_counts(counts)
        return self

    def _suffix_sums(self, per_step: np.ndarray) -> np.ndarray:
        """Sum over steps ``k .. k + future_length - 1`` (to the end by default)."""
        tail = np.cumsum(per_step[::-1], axis=0)[::-1]
        window = self.future_length
        if window is None or window <= 0 or window >= per_step.shape[0]:
            return tail
        out = tail.copy()
        out[:-window] -= tail[window:]
        return out

    @property
    def _uses_buckets(self) -> bool:
        return True

    def _training_summary(self, trajs, picks, hist_stat, rng) -> HistorySummary:
        mode = self.history_mode
        if mode == "counts" and is_one_hot(self.feature_map):
            counts = np.minimum(np.rint(hist_stat).astype(np.int64), self.count_cap)
            return HistorySummary(mode, tuple(int(c) for c in counts))
        states = [s for p in picks for s in trajs[p].states]
        return summarize_history(states, mode, self.feature_map, self.count_cap, self.context_length, rng)

    def _set_counts(self, counts: dict) -> None:
        self.counts_ = dict(sorted(counts.items(), key=lambda kv: _sort_key(kv[0])))
        bucket_marginal: dict = {}
        bc: dict = {}
        seen_buckets: dict = {}
        for (s, sid, b, task), row in self.counts_.items():
            bucket_marginal.setdefault((s, b, task), np.zeros(self.n_actions_))
            bucket_marginal[(s, b, task)] += row
            bc.setdefault((s, task), np.zeros(self.n_actions_))
            bc[(s, task)] += row
            seen_buckets.setdefault((s, sid, task), set()).add(b)
        self.bucket_counts_ = bucket_marginal
        self.bc_counts_ = bc
        self._seen_buckets = {k: sorted(v) for k, v in seen_buckets.items()}

    # ------------------------------------------------------------ queries

    def _allowed(self, state: int, task) -> np.ndarray:
        bc = self.bc_counts_.get((state, task))
        if bc is not None:
            return bc > 0
        if self.support_ is not None and state < self.support_.shape[0]:
            return self.support_[state]
        return np.ones(self.n_actions_, dtype=bool)

    def summarize(self, history: Sequence[int], rng=None) -> HistorySummary:
        return summarize_history(
            history, self.history_mode, self.feature_map, self.count_cap, self.context_length, rng
        )

    def resolve_bucket(self, exp_value) -> int:
        check_is_fitted(self, "bucketizer_")
        if isinstance(exp_value, str):
            if exp_value not in ("max", "max-bucket"):
                raise ValueError(f"unknown exp value {exp_value!r}")
            return self.bucketizer_.n_buckets - 1
        return self.bucketizer_.bucket(float(exp_value))

    def bc_proba(self, state: int, task=None) -> np.ndarray:
        """Marginal behavior-cloning head (uniform on the support if unseen)."""
        check_is_fitted(self, "counts_")
        task = task if self.task_conditioned else None
        allowed = self._allowed(state, task)
        row = self.bc_counts_.get((state, task))
        if row is None:
            return allowed / allowed.sum()
        return _normalise(row, self.smoothing, allowed)

    def lookup(self, state: int, summary: HistorySummary, bucket: int, task=None) -> tuple[np.ndarray, str]:
        """Action distribution and the fallback level that produced it.

        Levels, in order: ``exact``; ``nearest-bucket`` (closest bucket seen
        with this state and summary, ties towards the higher bucket);
        ``bucket`` (summary-marginal row for the bucket); ``bc``; ``uniform``.
        """
        check_is_fitted(self, "counts_")
        task = task if self.task_conditioned else None
        allowed = self._allowed(state, task)
        sid = self._summary_index.get(summary)
        if sid is not None:
            row = self.counts_.get((state, sid, bucket, task))
            if row is not None:
                return _normalise(row, self.smoothing, allowed), "exact"
            seen = self._seen_buckets.get((state, sid, task))
            if seen:
                nearest = min(seen, key=lambda b: (abs(b - bucket), -b))
                return _normalise(self.counts_[(state, sid, nearest, task)], self.smoothing, allowed), "nearest-bucket"
        row = self.bucket_counts_.get((state, bucket, task))
        if row is not None:
            return _normalise(row, self.smoothing, allowed), "bucket"
        row = self.bc_counts_.get((state, task))
        if row is not None:
            return _normalise(row, self.smoothing, allowed), "bc"
        return allowed / allowed.sum(), "uniform"

    def action_proba(self, state: int, history: Sequence[int] = (), exp_value="max", task=None, rng=None):
        summary = history if isinstance(history, HistorySummary) else self.summarize(history, rng)
        return self.lookup(int(state), summary, self.resolve_bucket(exp_value), task)[0]

    # ------------------------------------------------------- persistence

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    def to_lines(self) -> list[str]:
        check_is_fitted(self, "counts_")
        params = self.get_params(deep=False)
        params["feature_map"] = feature_map_to_dict(self.feature_map)
        header = {
            "class": type(self).__name__,
            "params": params,
            "edges": list(self.bucketizer_.edges),
            "n_actions": self.n_actions_,
            "n_states": self.n_states_,
            "support": None if self.support_ is None else self.support_.astype(int).tolist(),
            "summaries": [[s.mode, list(s.payload)] for s in self.summaries_],
        }
        lines = [f"behex-policy {FORMAT_VERSION}", json.dumps(header, sort_keys=True, separators=(",", ":"))]
        for (s, sid, b, task), row in self.counts_.items():
            cells = ",".join(str(int(c)) for c in row)
            lines.append(f"{s}\t{sid}\t{b}\t{'-' if task is None else task}\t{cells}")
        return lines

    @classmethod
    def load(cls, path) -> "BehavioralExplorationPolicy":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").splitlines())

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "BehavioralExplorationPolicy":
        magic = lines[0].split()
        if magic[:1] != ["behex-policy"] or int(magic[1]) != FORMAT_VERSION:
            raise ValueError(f"unsupported policy file header {lines[0]!r}")
        header = json.loads(lines[1])
        klass = {c.__name__: c for c in _policy_classes()}.get(header["class"], cls)
        params = dict(header["params"])
        params["feature_map"] = feature_map_from_dict(params["feature_map"])
        obj = klass(**params)
        obj.bucketizer_ = CoverageBucket(tuple(header["edges"]))
        obj.n_actions_ = int(header["n_actions"])
        obj.n_states_ = int(header["n_states"])
        obj.support_ = None if header["support"] is None else np.asarray(header["support"], dtype=bool)
        obj.summaries_ = tuple(HistorySummary(m, tuple(p)) for m, p in header["summaries"])
        obj._summary_index = {s: i for i, s in enumerate(obj.summaries_)}
        counts = {}
        for ln in lines[2:]:
            if not ln.strip():
                continue
            s, sid, b, task, cells = ln.split("\t")
            key = (int(s), int(sid), int(b), None if task == "-" else int(task))
            counts[key] = np.asarray([float(c) for c in cells.split(",")])
        obj._set_counts(counts)
        return obj


def _sort_key(key):
    s, sid, b, task = key
    return (s, sid, b, -1 if task is None else task)


def _policy_classes():
    from .baselines import HistoryBehaviorCloning

    return (BehavioralExplorationPolicy, HistoryBehaviorCloning)


def train_be(dataset, feature_map, reg: float = DEFAULT_LAMBDA, n_histories: int = 4, **params):
    return BehavioralExplorationPolicy(feature_map, reg=reg, n_histories=n_histories, **params).fit(dataset)


def train_be_task(dataset, feature_map, reg: float = DEFAULT_LAMBDA, n_histories: int = 4, **params):
    params["task_conditioned"] = True
    return BehavioralExplorationPolicy(feature_map, reg=reg, n_histories=n_histories, **params).fit(dataset)


def sample_action(policy: BehavioralExplorationPolicy, state: int, history, exp_value="max", rng=None, task=None) -> int:
    rng = check_rng(rng)
    return sample_categorical(policy.action_proba(state, history, exp_value, task, rng), rng)


# --------------------------------------------------------------------------
# exact conditional by enumeration


def _count_paths(mdp, table, state: int, step: int, memo: dict) -> int:
    key = (state, step)
    if key not in memo:
        acts = np.flatnonzero(table[state] > 0)
        if step >= mdp.horizon:
            memo[key] = len(acts)
        else:
            memo[key] = sum(_count_paths(mdp, table, mdp.successor(state, a), step + 1, memo) for a in acts)
    return memo[key]


def enumerate_suffixes(mdp, beta, state: int, step: int = 0, budget: int = 10**6):
    """All positive-probability continuations from ``state`` at ``step``.

    Yields ``(first_action, probability, suffix_states)`` where
    ``suffix_states`` runs from ``state`` to the state at the horizon.
    """
    if not mdp.is_deterministic:
        raise ValueError("suffix enumeration needs a deterministic MDP")
    if beta.n_components != 1:
        raise ValueError("suffix enumeration needs a single-component behavior policy")
    table = beta.tables[0]
    n_paths = _count_paths(mdp, table, state, step, {})
    if n_paths > budget:
        raise EnumerationBudgetError(f"{n_paths} suffixes exceed the budget of {budget}")

    def walk(s, k, prob, path):
        if k >= mdp.horizon:
            yield prob, path
            return
        for a in np.flatnonzero(table[s] > 0):
            nxt = mdp.successor(s, int(a))
            yield from walk(nxt, k + 1, prob * table[s, a], path + [nxt])

    out = []
    for a in np.flatnonzero(table[state] > 0):
        a = int(a)
        if step >= mdp.horizon:
            out.append((a, float(table[state, a]), [state]))
            continue
        nxt = mdp.successor(state, a)
        for prob, path in walk(nxt, step + 1, float(table[state, a]), [state, nxt]):
            out.append((a, prob, path))
    return out


def suffix_statistics(mdp, beta, feature_map, state: int, step: int = 0, budget: int = 10**6):
    """First actions, probabilities and feature statistics of every suffix.

    Statistics are visit counts per direction for one-hot maps and Gram
    matrices otherwise.
    """
    suffixes = enumerate_suffixes(mdp, beta, state, step, budget)
    first = np.array([a for a, _, _ in suffixes], dtype=np.int64)
    probs = np.array([p for _, p, _ in suffixes])
    if is_one_hot(feature_map):
        stats = np.stack([np.bincount(feature_map.directions(path), minlength=feature_map.dim) for _, _, path in suffixes])
    else:
        stats = np.stack([f.T @ f for f in (feature_map.transform(path) for _, _, path in suffixes)])
    return first, probs, stats.astype(float)


def history_statistic(history_states, feature_map) -> np.ndarray:
    if is_one_hot(feature_map):
        if not len(history_states):
            return np.zeros(feature_map.dim)
        return np.bincount(feature_map.directions(history_states), minlength=feature_map.dim).astype(float)
    return CoverageAccumulator.from_states(list(history_states), feature_map, 1.0).gram


def conditional_from_statistics(first, probs, stats, hist_stat, lam: float, n_actions: int, tol: float = TIE_TOL):
    if stats.ndim == 2:
        covs = finite_state_coverage(stats + hist_stat, lam)
    else:
        eye = lam * np.eye(stats.shape[-1])
        covs = 1.0 / np.trace(np.linalg.inv(stats + hist_stat + eye), axis1=1, axis2=2)
    keep = covs >= covs.max() - tol
    out = np.bincount(first[keep], weights=probs[keep], minlength=n_actions)
    return out / out.sum()


def oracle_conditional(
    mdp,
    beta,
    state: int,
    history_states: Sequence[int],
    feature_map,
    lam: float = DEFAULT_LAMBDA,
    step: int = 0,
    budget: int = 10**6,
    tol: float = TIE_TOL,
) -> np.ndarray:
    """``P^beta[a | s, h, cov(h + suffix) = max]`` computed exactly.

    Every behavior-policy continuation from ``state`` is enumerated; those
    whose coverage together with ``history_states`` is within ``tol`` of the
    maximum are kept and their first actions weighted by probability.
    """
    first, probs, stats = suffix_statistics(mdp, beta, feature_map, state, step, budget)
    hist = history_statistic(history_states, feature_map)
    return conditional_from_statistics(first, probs, stats, hist, lam, mdp.n_actions, tol)
