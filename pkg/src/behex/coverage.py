"""Trace-of-inverse coverage of state multisets.

Coverage of a multiset of states ``h`` under features ``phi`` is
``1 / tr((sum_s phi(s) phi(s)^T + lam I)^{-1})``; the behavior-subspace
variant projects the Gram matrix onto the dominant eigenvectors of the
demonstrator's expected Gram matrix first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptySubspaceError
from .linalg import jacobi_eigh, sherman_morrison_update

DEFAULT_LAMBDA = 0.01
DEFAULT_REL_EPSILON = 1e-3
RECOMPUTE_EVERY = 512


# --------------------------------------------------------------------------
# feature maps


class _FeatureMap(TransformerMixin, BaseEstimator):
    """Shared plumbing: ``transform`` maps a batch, ``__call__`` one state."""

    def fit(self, X=None, y=None):
        return self

    def __call__(self, state) -> np.ndarray:
        return self.transform([state])[0]

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def _as_vectors(self, X, coords) -> np.ndarray:
        arr = np.asarray(X)
        if arr.ndim == 1 and coords is not None:
            ids = _check_ids(arr, len(coords))
            return np.asarray(coords, dtype=float)[ids]
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        return arr


def _check_ids(X, n: int) -> np.ndarray:
    ids = np.asarray(X)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        if not np.all(np.equal(np.mod(ids, 1), 0)):
            raise ValueError("state ids must be integers")
        ids = ids.astype(np.int64)
    ids = ids.astype(np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise ValueError(f"state id {bad} out of range for {n} entries")
    return ids


class OneHotFeatures(_FeatureMap):
    """``phi(s) = e_{index[s]}`` (or ``e_s`` when ``index`` is None).

    Parameters
    ----------
    n_dims : int
        Feature dimension d.
    index : sequence of int, optional
        Direction assigned to each state id. Several states may share one.
    """

    def __init__(self, n_dims: int, index: Sequence[int] | None = None):
        self.n_dims = n_dims
        self.index = index

    @property
    def dim(self) -> int:
        return int(self.n_dims)

    @property
    def n_states(self) -> int:
        return len(self.index) if self.index is not None else int(self.n_dims)

    def directions(self, X) -> np.ndarray:
        """Direction index of each state id."""
        ids = _check_ids(X, self.n_states)
        if self.index is None:
            return ids
        idx = np.asarray(self.index, dtype=np.int64)[ids]
        return idx

    def transform(self, X) -> np.ndarray:
        dirs = self.directions(X)
        out = np.zeros((dirs.size, self.dim))
        out[np.arange(dirs.size), dirs] = 1.0
        return out


class IdentityFeatures(_FeatureMap):
    """``phi(s) = s`` for real-vector states, or ``coords[s]`` for ids."""

    def __init__(self, n_dims: int, coords=None):
        self.n_dims = n_dims
        self.coords = coords

    @property
    def dim(self) -> int:
        return int(self.n_dims)

    def transform(self, X) -> np.ndarray:
        vecs = self._as_vectors(X, self.coords)
        if vecs.shape[1] != self.dim:
            raise ValueError(f"expected vectors of length {self.dim}, got {vecs.shape[1]}")
        return vecs.copy()


class RandomCosineFeatures(_FeatureMap):
    """Random Fourier-style features ``cos(A x + b)``.

    ``A`` (``n_components x n_features``) is standard normal and ``b`` is
    uniform on ``[0, 2 pi)``, both drawn in :meth:`fit` from
    ``numpy.random.default_rng(random_state)`` in that order.
    """

    def __init__(self, n_components: int, n_features: int, random_state: int = 0, coords=None):
        self.n_components = n_components
        self.n_features = n_features
        self.random_state = random_state
        self.coords = coords

    @property
    def dim(self) -> int:
        return int(self.n_components)

    def fit(self, X=None, y=None):
        rng = np.random.default_rng(self.random_state)
        self.weights_ = rng.normal(size=(self.n_components, self.n_features))
        self.offsets_ = rng.uniform(0.0, 2.0 * np.pi, size=self.n_components)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        vecs = self._as_vectors(X, self.coords)
        if vecs.shape[1] != self.n_features:
            raise ValueError(f"expected vectors of length {self.n_features}, got {vecs.shape[1]}")
        return np.cos(vecs @ self.weights_.T + self.offsets_)


def evaluate_features(feature_map: _FeatureMap, state) -> np.ndarray:
    out = feature_map(state)
    if not np.all(np.isfinite(out)):
        raise ValueError("feature map produced non-finite values")
    return out


def is_one_hot(feature_map) -> bool:
    return isinstance(feature_map, OneHotFeatures)


# --------------------------------------------------------------------------
# accumulator


class CoverageAccumulator:
    """Running Gram matrix of a state multiset and its regularised inverse.

    The inverse is maintained with rank-one updates and recomputed from the
    Gram matrix every ``RECOMPUTE_EVERY`` updates to bound drift.
    """

    def __init__(self, dim: int, lam: float = DEFAULT_LAMBDA):
        if lam <= 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.gram = np.zeros((self.dim, self.dim))
        self.inv = np.eye(self.dim) / self.lam
        self.n_states = 0
        self._since_recompute = 0

    @classmethod
    def from_features(cls, phis: Iterable[np.ndarray], dim: int, lam: float = DEFAULT_LAMBDA):
        acc = cls(dim, lam)
        for phi in phis:
            acc.add(phi)
        return acc

    @classmethod
    def from_states(cls, states, feature_map, lam: float = DEFAULT_LAMBDA):
        acc = cls(feature_map.dim, lam)
        if len(states):
            for phi in feature_map.transform(states):
                acc.add(phi)
        return acc

    def copy(self) -> "CoverageAccumulator":
        new = CoverageAccumulator.__new__(CoverageAccumulator)
        new.dim, new.lam, new.n_states = self.dim, self.lam, self.n_states
        new._since_recompute = self._since_recompute
        new.gram = self.gram.copy()
        new.inv = self.inv.copy()
        return new

    def add(self, phi) -> "CoverageAccumulator":
        phi = np.asarray(phi, dtype=float).reshape(-1)
        if phi.shape[0] != self.dim:
            raise ValueError(f"feature vector has length {phi.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature vector has non-finite entries")
        self.gram += np.outer(phi, phi)
        self.n_states += 1
        self._since_recompute += 1
        if self._since_recompute >= RECOMPUTE_EVERY:
            self.recompute()
        elif np.any(phi):
            self.inv = sherman_morrison_update(self.inv, phi)
        return self

    def recompute(self) -> None:
        inv = np.linalg.inv(self.gram + self.lam * np.eye(self.dim))
        self.inv = 0.5 * (inv + inv.T)
        self._since_recompute = 0

    def coverage(self) -> float:
        return 1.0 / float(np.trace(self.inv))


def add_state(acc: CoverageAccumulator, phi) -> CoverageAccumulator:
    return acc.add(phi)


def coverage(acc: CoverageAccumulator) -> float:
    return acc.coverage()


def finite_state_coverage(counts, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``(sum_s 1 / (N(s) + lam))^{-1}`` along the last axis of ``counts``."""
    counts = np.asarray(counts, dtype=float)
    return 1.0 / np.sum(1.0 / (counts + lam), axis=-1)


def coverage_to_go(history_states, future_states, feature_map, lam: float = DEFAULT_LAMBDA) -> float:
    """Coverage of the concatenation of ``history_states`` and ``future_states``."""
    states = list(history_states) + list(future_states)
    return CoverageAccumulator.from_states(states, feature_map, lam).coverage()


# --------------------------------------------------------------------------
# behavior subspace


@dataclass(frozen=True)
class BehaviorSubspace:
    basis: np.ndarray
    epsilon: float
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


def behavior_gram(dataset, feature_map) -> np.ndarray:
    """Per-trajectory mean of ``sum_{k>=1} phi(s_k) phi(s_k)^T``."""
    trajectories = list(dataset.trajectories if hasattr(dataset, "trajectories") else dataset)
    if not trajectories:
        raise ValueError("dataset is empty")
    d = feature_map.dim
    total = np.zeros((d, d))
    for traj in trajectories:
        feats = feature_map.transform(list(traj.states)[1:])
        total += feats.T @ feats
    return total / len(trajectories)


def estimate_behavior_subspace(
    dataset, feature_map, epsilon: float | None = None, rel_epsilon: float = DEFAULT_REL_EPSILON
) -> BehaviorSubspace:
    """Eigenvectors of the behavior Gram matrix with eigenvalue >= epsilon.

    When ``epsilon`` is None it defaults to ``rel_epsilon`` times the largest
    eigenvalue.
    """
    gram = behavior_gram(dataset, feature_map)
    values, vectors = jacobi_eigh(gram)
    if epsilon is None:
        epsilon = rel_epsilon * max(values[0], 0.0)
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    keep = values >= epsilon
    if not np.any(keep):
        raise EmptySubspaceError(
            f"epsilon={epsilon:g} exceeds the largest eigenvalue {values[0]:g}"
        )
    return BehaviorSubspace(vectors[:, keep].copy(), float(epsilon), values[keep].copy())


def coverage_beta(acc: CoverageAccumulator, sub: BehaviorSubspace) -> float:
    u = sub.basis
    if u.shape[0] != acc.dim:
        raise ValueError(f"subspace lives in R^{u.shape[0]}, accumulator in R^{acc.dim}")
    proj = u.T @ acc.gram @ u + acc.lam * np.eye(u.shape[1])
    return 1.0 / float(np.trace(np.linalg.inv(proj)))


def feature_map_to_dict(fmap) -> dict:
    if isinstance(fmap, OneHotFeatures):
        index = None if fmap.index is None else [int(i) for i in fmap.index]
        return {"kind": "onehot", "n_dims": int(fmap.n_dims), "index": index}
    coords = None if fmap.coords is None else np.asarray(fmap.coords, dtype=float).tolist()
    if isinstance(fmap, IdentityFeatures):
        return {"kind": "identity", "n_dims": int(fmap.n_dims), "coords": coords}
    if isinstance(fmap, RandomCosineFeatures):
        return {
            "kind": "random_cosine",
            "n_components": int(fmap.n_components),
            "n_features": int(fmap.n_features),
            "random_state": int(fmap.random_state),
            "coords": coords,
        }
    raise TypeError(f"cannot serialise feature map of type {type(fmap).__name__}")


def feature_map_from_dict(spec: dict):
    kind = spec["kind"]
    if kind == "onehot":
        index = spec.get("index")
        return OneHotFeatures(spec["n_dims"], None if index is None else tuple(index))
    coords = spec.get("coords")
    coords = None if coords is None else np.asarray(coords, dtype=float)
    if kind == "identity":
        return IdentityFeatures(spec["n_dims"], coords)
    if kind == "random_cosine":
        return RandomCosineFeatures(spec["n_components"], spec["n_features"], spec["random_state"], coords).fit()
    raise ValueError(f"unknown feature map kind {kind!r}")
