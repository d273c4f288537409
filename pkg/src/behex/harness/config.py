"""Experiment configuration: a flat, typed schema over TOML text.

Keys are dotted (``env.kind`` lives in the ``[env]`` table). Relative paths
are resolved against the directory holding the config file.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .._rng import RNG_ALGORITHM
from ..exceptions import ConfigError

REQUIRED = object()

_NUM = (int, float)
_STR = (str,)
_INT = (int,)
_BOOL = (bool,)
_LIST = (list,)
_EXP = (str, int, float, list)

# key -> (accepted types, default, description with unit)
SCHEMA: dict = {
    "seed": (_INT, REQUIRED, "master seed; every RNG stream is derived from it"),
    "rng": (_STR, RNG_ALGORITHM, "RNG algorithm identifier; only the default is supported"),
    "lambda": (_NUM, 0.01, "coverage regulariser (dimensionless)"),
    "epsilon": (_NUM, None, "absolute behavior-subspace threshold; overrides epsilon_rel"),
    "epsilon_rel": (_NUM, 1e-3, "subspace threshold as a fraction of the largest eigenvalue"),
    "env.kind": (_STR, REQUIRED, "maze | two_goal_tree | random_terminal_tree"),
    "env.layout": (_STR, None, "inline maze layout text"),
    "env.layout_file": (_STR, None, "path to a maze layout file"),
    "env.goal_weights": (_LIST, None, "demonstrator goal-mixture weights, one per G cell"),
    "env.horizon": (_INT, 40, "maze episode length K (steps)"),
    "env.region_block": (_INT, 1, "region side length (cells) for cells without a digit"),
    "env.absorbing_goals": (_BOOL, True, "goal cells are absorbing"),
    "env.p": (_NUM, 0.1, "two-goal tree: probability of the branch toward g2"),
    "env.depth": (_INT, 3, "tree depth (steps from root to leaf)"),
    "env.n_beta": (_INT, 3, "random tree: number of terminal directions"),
    "env.branching": (_INT, 2, "random tree: branching factor"),
    "env.tree_seed": (_INT, 0, "random tree: construction seed"),
    "env.trap": (_BOOL, False, "random tree: add an off-support trap action"),
    "features.kind": (_STR, "default", "default | onehot | identity | random_cosine | terminal"),
    "features.dim": (_INT, 16, "random_cosine output dimension"),
    "features.seed": (_INT, 0, "random_cosine parameter seed"),
    "data.n_trajectories": (_INT, 1000, "demonstrations T"),
    "data.path": (_STR, "dataset.jsonl", "dataset file, relative to output.dir"),
    "train.n_histories": (_INT, 4, "histories sampled per (trajectory, step) pair, M"),
    "train.n_buckets": (_INT, 8, "coverage buckets B"),
    "train.smoothing": (_NUM, 0.0, "Laplace pseudo-count alpha"),
    "train.history_mode": (_STR, "counts", "counts | downsampled | first_state | empty"),
    "train.count_cap": (_INT, 3, "cap C on per-direction visit counts"),
    "train.context_length": (_INT, 50, "downsampled history size (states)"),
    "train.min_history_trajectories": (_INT, 1, "fewest trajectories in a sampled history"),
    "train.max_history_trajectories": (_INT, 1, "most trajectories in a sampled history"),
    "train.future_length": (_INT, None, "coverage future length (states); whole suffix if unset"),
    "train.task_conditioned": (_BOOL, False, "append the task label to the table key"),
    "train.path": (_STR, "policy.txt", "policy dump, relative to output.dir"),
    "deploy.n_episodes": (_INT, 4, "episodes per deployment run"),
    "deploy.exp": (_EXP, "max", "\"max\", a coverage value, or a per-episode list"),
    "deploy.mode": (_STR, "online", "online | first_state | none"),
    "deploy.n_seeds": (_INT, 20, "independent deployment seeds"),
    "calibrate.exp_values": (_LIST, None, "exp values to sweep; default one per bucket"),
    "compare.methods": (_LIST, ["be", "bc", "random", "count_bonus"], "methods to deploy"),
    "compare.label": (_STR, None, "prefix for method names in comparison tables"),
    "compare.bc_noise": (_NUM, 0.15, "action-noise mixture for bc_noise"),
    "compare.count_bonus": (_NUM, 1.0, "count-bonus weight c"),
    "prop1.n_instances": (_INT, 100, "random tree instances"),
    "prop1.n_trials": (_INT, 1, "oracle trials per instance"),
    "prop1.two_goal_p": (_LIST, [0.1, 0.5], "two-goal tree p values checked alongside"),
    "prop1.bc_trials": (_INT, 10000, "Monte Carlo trials for the demonstrator cover time"),
    "prop1.be_trials": (_INT, 1000, "trials for the trained-policy cover time"),
    "prop1.be_n_trajectories": (_INT, 5000, "demonstrations for the trained two-goal policy"),
    "prop1.be_n_histories": (_INT, 8, "M for the trained two-goal policy"),
    "output.dir": (_STR, REQUIRED, "output directory, relative to the config file"),
}

_CHOICES = {
    "env.kind": ("maze", "two_goal_tree", "random_terminal_tree"),
    "features.kind": ("default", "onehot", "identity", "random_cosine", "terminal"),
    "train.history_mode": ("counts", "downsampled", "first_state", "empty"),
    "deploy.mode": ("online", "first_state", "none"),
    "rng": (RNG_ALGORITHM,),
}

_METHODS = ("be", "bc", "bc_noise", "bc_history", "random", "count_bonus", "oracle", "be_first_state")


@dataclass
class ExperimentConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)
    source: Path | None = None

    def __getitem__(self, key: str):
        return self.values[key]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return Path(os.path.normpath(p if p.is_absolute() else self.base_dir / p))

    @property
    def output_dir(self) -> Path:
        return self.resolve(self["output.dir"])

    def output_path(self, key: str) -> Path:
        return self.output_dir / self[key]


def _flatten(table: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in table.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _type_ok(value, types) -> bool:
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def parse_config(text: str, base_dir=None, source=None) -> ExperimentConfig:
    """Validate TOML ``text``; every problem is reported in one ConfigError."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    flat = _flatten(raw)
    problems, missing = [], []
    for key in sorted(set(flat) - set(SCHEMA)):
        problems.append(f"unknown key {key}")
    values = {}
    for key, (types, default, _) in SCHEMA.items():
        if key not in flat:
            if default is REQUIRED:
                missing.append(key)
            else:
                values[key] = list(default) if isinstance(default, list) else default
            continue
        value = flat[key]
        if not _type_ok(value, types):
            problems.append(f"{key} has type {type(value).__name__}, expected {'/'.join(t.__name__ for t in types)}")
            continue
        if key in _CHOICES and value not in _CHOICES[key]:
            problems.append(f"{key}={value!r} not in {list(_CHOICES[key])}")
        values[key] = value
    for m in values.get("compare.methods") or []:
        if m not in _METHODS:
            problems.append(f"unknown method {m!r} in compare.methods")
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if values.get("env.kind") == "maze" and not missing:
        if values["env.layout"] is None and values["env.layout_file"] is None:
            missing.append("env.layout|env.layout_file")
        elif values["env.layout_file"] is not None:
            path = Path(values["env.layout_file"])
            path = path if path.is_absolute() else base / path
            if not path.is_file():
                problems.append(f"env.layout_file {path} does not exist")
    if missing or problems:
        parts = [f"missing keys: {', '.join(missing)}"] if missing else []
        raise ConfigError("; ".join(parts + problems), missing=missing)
    return ExperimentConfig(values, base, Path(source) if source else None)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), path.parent.resolve(), path)


def layout_text(cfg: ExperimentConfig) -> str:
    if cfg["env.layout_file"] is not None:
        return cfg.resolve(cfg["env.layout_file"]).read_text(encoding="utf-8")
    return cfg["env.layout"]
