"""Experiment drivers behind the CLI: data, training, deployment and sweeps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .._rng import make_rng
from ..baselines import BehaviorCloning, HistoryBehaviorCloning, RandomPolicy, make_bc_noise
from ..coverage import estimate_behavior_subspace
from ..envs import build_grid_maze, build_random_terminal_tree, build_two_goal_tree, terminal_feature_map
from ..exceptions import ConfigError
from ..mdp import DemoDataset, generate_dataset
from ..policy import BehavioralExplorationPolicy, round_sig
from .config import ExperimentConfig, layout_text
from .online import CountBonusAgent, ExplorationAgent, MetricsLog, OracleAgent, TableAgent, run_online


@dataclass
class Environment:
    mdp: object
    beta: object
    feature_map: object
    regions: np.ndarray
    goals: tuple
    kind: str


def build_environment(cfg: ExperimentConfig) -> Environment:
    kind = cfg["env.kind"]
    feat = cfg["features.kind"]
    if kind == "maze":
        feat = "onehot" if feat == "default" else feat
        if feat == "terminal":
            raise ConfigError("features.kind='terminal' applies to tree environments only")
        mdp, beta, fmap, maze = build_grid_maze(
            layout_text(cfg),
            cfg["env.goal_weights"],
            horizon=cfg["env.horizon"],
            region_block=cfg["env.region_block"],
            absorbing_goals=cfg["env.absorbing_goals"],
            features=feat,
            feature_dim=cfg["features.dim"],
            feature_seed=cfg["features.seed"],
        )
        return Environment(mdp, beta, fmap, np.asarray(maze.regions), tuple(maze.goals), kind)
    if feat not in ("default", "terminal"):
        raise ConfigError(f"tree environments use terminal features, got features.kind={feat!r}")
    if kind == "two_goal_tree":
        mdp, beta = build_two_goal_tree(cfg["env.p"], cfg["env.depth"])
        fmap = terminal_feature_map(mdp)
    else:
        mdp, beta, fmap = build_random_terminal_tree(
            cfg["env.n_beta"], cfg["env.depth"], cfg["env.branching"], cfg["env.tree_seed"], trap=cfg["env.trap"]
        )
    goals = tuple(int(s) for s in np.flatnonzero(mdp.terminal))
    return Environment(mdp, beta, fmap, np.arange(mdp.n_states), goals, kind)


def support_table(beta) -> np.ndarray:
    return np.stack([beta.support(s) for s in range(beta.tables.shape[1])])


# --------------------------------------------------------------------------
# data and training


def generate(cfg: ExperimentConfig, env: Environment | None = None) -> DemoDataset:
    env = env or build_environment(cfg)
    rng = make_rng(cfg["seed"], "data")
    return generate_dataset(env.mdp, env.beta, cfg["data.n_trajectories"], rng, seed=cfg["seed"])


def load_or_generate(cfg: ExperimentConfig, env: Environment) -> DemoDataset:
    path = cfg.output_path("data.path")
    if path.is_file():
        ds = DemoDataset.load(path)
        if ds.mdp_fingerprint != env.mdp.fingerprint():
            raise ConfigError(f"dataset {path} was generated for a different MDP")
        return ds
    ds = generate(cfg, env)
    ds.dump(path)
    return ds


def policy_params(cfg: ExperimentConfig, feature_map) -> dict:
    return dict(
        feature_map=feature_map,
        reg=cfg["lambda"],
        n_histories=cfg["train.n_histories"],
        n_buckets=cfg["train.n_buckets"],
        smoothing=cfg["train.smoothing"],
        history_mode=cfg["train.history_mode"],
        count_cap=cfg["train.count_cap"],
        context_length=cfg["train.context_length"],
        min_history_trajectories=cfg["train.min_history_trajectories"],
        max_history_trajectories=cfg["train.max_history_trajectories"],
        future_length=cfg["train.future_length"],
        task_conditioned=cfg["train.task_conditioned"],
        random_state=cfg["seed"],
    )


def train(cfg: ExperimentConfig, env: Environment, dataset: DemoDataset) -> BehavioralExplorationPolicy:
    pol = BehavioralExplorationPolicy(**policy_params(cfg, env.feature_map))
    return pol.fit(dataset, n_actions=env.mdp.n_actions, support=support_table(env.beta))


def load_or_train(cfg: ExperimentConfig, env: Environment) -> tuple[BehavioralExplorationPolicy, DemoDataset]:
    dataset = load_or_generate(cfg, env)
    path = cfg.output_path("train.path")
    if path.is_file():
        return BehavioralExplorationPolicy.load(path), dataset
    pol = train(cfg, env, dataset)
    pol.save(path)
    return pol, dataset


def subspace_for(cfg: ExperimentConfig, env: Environment, dataset: DemoDataset):
    return estimate_behavior_subspace(dataset, env.feature_map, cfg["epsilon"], cfg["epsilon_rel"])


# --------------------------------------------------------------------------
# deployment


def make_agent(method: str, cfg: ExperimentConfig, env: Environment, policy, dataset, exp=None, mode=None):
    """Fresh agent for one deployment run."""
    exp = cfg["deploy.exp"] if exp is None else exp
    if method == "be":
        return ExplorationAgent(policy, exp, mode or cfg["deploy.mode"], name="be")
    if method == "be_first_state":
        return ExplorationAgent(policy, exp, "first_state", name="be_first_state")
    support = support_table(env.beta)
    if method in ("bc", "bc_noise"):
        bc = BehaviorCloning().fit(dataset, n_actions=env.mdp.n_actions, support=support)
        if method == "bc":
            return TableAgent(bc, "bc", restricted=True)
        return TableAgent(make_bc_noise(bc, cfg["compare.bc_noise"]), "bc_noise")
    if method == "bc_history":
        params = policy_params(cfg, env.feature_map)
        params["n_buckets"] = 1
        hbc = HistoryBehaviorCloning(**params).fit(dataset, n_actions=env.mdp.n_actions, support=support)
        return ExplorationAgent(hbc, 0.0, "online", name="bc_history")
    if method == "random":
        return TableAgent(RandomPolicy(env.mdp.n_actions), "random")
    if method == "count_bonus":
        return CountBonusAgent(env.mdp, cfg["compare.count_bonus"])
    if method == "oracle":
        return OracleAgent(env.mdp, env.beta, env.feature_map, cfg["lambda"])
    raise ConfigError(f"unknown method {method!r}")


def deploy_seeds(cfg, env, agent_factory, subspace=None, n_seeds=None, n_episodes=None) -> list[MetricsLog]:
    """One log per seed; seed ``i`` uses the stream ``(seed, "deploy", i)`` for every method."""
    n_seeds = cfg["deploy.n_seeds"] if n_seeds is None else n_seeds
    n_episodes = cfg["deploy.n_episodes"] if n_episodes is None else n_episodes
    logs = []
    for i in range(n_seeds):
        agent = agent_factory()
        log = run_online(
            env.mdp, agent, n_episodes, make_rng(cfg["seed"], "deploy", i),
            feature_map=env.feature_map, lam=cfg["lambda"], subspace=subspace,
            regions=env.regions, goals=env.goals, beta=env.beta,
        )
        log.metadata["seed_index"] = i
        logs.append(log)
    return logs


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    err = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), err


def summarize_logs(logs: list[MetricsLog]) -> dict:
    regions = [log.final("regions_reached") for log in logs]
    goals = [log.final("goals_reached") for log in logs]
    r_mean, r_err = mean_stderr(regions)
    g_mean, g_err = mean_stderr(goals)
    return {
        "regions_mean": r_mean, "regions_stderr": r_err, "regions": regions,
        "goals_mean": g_mean, "goals_stderr": g_err, "goals": goals,
        "coverage_mean": mean_stderr([log.final("coverage") for log in logs])[0],
        "support_violations": int(sum(log.metadata["support_violations"] for log in logs)),
    }


def one_sided_greater(a, b) -> float:
    """Welch one-sided p-value for mean(a) > mean(b)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        return 0.0 if a.mean() > b.mean() else 1.0
    return float(stats.ttest_ind(a, b, equal_var=False, alternative="greater").pvalue)


def deploy(cfg: ExperimentConfig) -> dict:
    env = build_environment(cfg)
    policy, dataset = load_or_train(cfg, env)
    sub = subspace_for(cfg, env, dataset)
    agents = []

    def factory():
        agents.append(make_agent("be", cfg, env, policy, dataset))
        return agents[-1]

    logs = deploy_seeds(cfg, env, factory, sub)
    out_dir = cfg.output_dir / "deploy"
    for log in logs:
        log.to_csv(out_dir / f"seed_{log.metadata['seed_index']:03d}.csv")
    summary = summarize_logs(logs)
    fallbacks: dict = {}
    for a in agents:
        for k, v in a.fallbacks.items():
            fallbacks[k] = fallbacks.get(k, 0) + v
    summary["fallbacks"] = fallbacks
    summary["subspace_rank"] = sub.rank
    write_json(cfg.output_dir / "deploy_summary.json", summary)
    return summary


# --------------------------------------------------------------------------
# sweeps


def calibration_sweep(cfg: ExperimentConfig, env, policy, dataset, exp_values=None) -> dict:
    """Mean regions reached per constant exp value, plus the Spearman correlation."""
    if exp_values is None:
        exp_values = [policy.bucketizer_.representative(b) for b in range(policy.bucketizer_.n_buckets)]
    if len(exp_values) < 3:
        raise ConfigError("calibration needs at least 3 exp values")
    rows = []
    for v in exp_values:
        logs = deploy_seeds(cfg, env, lambda v=v: make_agent("be", cfg, env, policy, dataset, exp=v, mode="online"))
        s = summarize_logs(logs)
        rows.append({
            "exp": float(v), "bucket": policy.resolve_bucket(v),
            "regions_mean": s["regions_mean"], "regions_stderr": s["regions_stderr"],
            "goals_mean": s["goals_mean"], "support_violations": s["support_violations"],
        })
    means = [r["regions_mean"] for r in rows]
    rho = stats.spearmanr([r["exp"] for r in rows], means).statistic if np.ptp(means) > 0 else float("nan")
    return {"rows": rows, "spearman": float(rho), "n_seeds": cfg["deploy.n_seeds"]}


def calibrate(cfg: ExperimentConfig) -> dict:
    env = build_environment(cfg)
    policy, dataset = load_or_train(cfg, env)
    result = calibration_sweep(cfg, env, policy, dataset, cfg["calibrate.exp_values"])
    bc = summarize_logs(deploy_seeds(cfg, env, lambda: make_agent("bc", cfg, env, policy, dataset)))
    result["bc_regions_mean"], result["bc_regions_stderr"] = bc["regions_mean"], bc["regions_stderr"]
    write_json(cfg.output_dir / "calibration.json", result)
    write_csv(
        cfg.output_dir / "calibration.csv",
        ["exp", "bucket", "regions_mean", "regions_stderr", "goals_mean"],
        [[r[k] for k in ("exp", "bucket", "regions_mean", "regions_stderr", "goals_mean")] for r in result["rows"]],
    )
    from .svg import line_chart

    xs = list(range(len(result["rows"])))
    line_chart(
        cfg.output_dir / "calibration.svg",
        {"be": (xs, [r["regions_mean"] for r in result["rows"]])},
        "exp bucket", "regions reached",
    )
    return result


def ablation_history(cfg: ExperimentConfig, env, policy, dataset) -> dict:
    """Regions reached under online, first-state and no history, with BC alongside."""
    out = {}
    for mode in ("online", "first_state", "none"):
        logs = deploy_seeds(cfg, env, lambda m=mode: make_agent("be", cfg, env, policy, dataset, mode=m))
        out[mode] = summarize_logs(logs)
    out["bc"] = summarize_logs(deploy_seeds(cfg, env, lambda: make_agent("bc", cfg, env, policy, dataset)))
    out["p_online_gt_first_state"] = one_sided_greater(out["online"]["regions"], out["first_state"]["regions"])
    # none-mode reads the marginal rows, which are the BC counts
    states = range(env.mdp.n_states)
    bc = BehaviorCloning().fit(dataset, n_actions=env.mdp.n_actions, support=support_table(env.beta))
    out["none_rows_equal_bc"] = bool(all(np.array_equal(policy.bc_proba(s), bc.action_proba(s)) for s in states))
    return out


def ablate(cfg: ExperimentConfig) -> dict:
    env = build_environment(cfg)
    policy, dataset = load_or_train(cfg, env)
    result = ablation_history(cfg, env, policy, dataset)
    write_json(cfg.output_dir / "ablation.json", result)
    return result


# --------------------------------------------------------------------------
# comparison


BUDGET_KEYS = ("deploy.n_episodes", "deploy.n_seeds", "env.horizon")


def compare(configs: list[ExperimentConfig], out_dir) -> dict:
    """Deploy every configured method and tabulate final regions and goals."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    budgets = {tuple(c[k] for k in BUDGET_KEYS) for c in configs}
    if len(budgets) > 1:
        raise ConfigError(f"configs disagree on the budget ({', '.join(BUDGET_KEYS)}): {sorted(budgets)}")
    out_dir = Path(out_dir)
    methods: dict = {}
    curves: dict = {}
    for cfg in configs:
        env = build_environment(cfg)
        policy, dataset = load_or_train(cfg, env)
        sub = subspace_for(cfg, env, dataset)
        for m in cfg["compare.methods"]:
            name = f"{cfg['compare.label']}:{m}" if cfg["compare.label"] else m
            if name in methods:
                raise ConfigError(f"duplicate method name {name!r}; set compare.label")
            logs = deploy_seeds(cfg, env, lambda m=m: make_agent(m, cfg, env, policy, dataset), sub)
            for log in logs:
                log.to_csv(out_dir / "logs" / name.replace(":", "_") / f"seed_{log.metadata['seed_index']:03d}.csv")
            methods[name] = summarize_logs(logs)
            curves[name] = {
                col: np.mean([log.column(col) for log in logs], axis=0).tolist()
                for col in ("regions_reached", "goals_reached")
            }
    baseline = next((n for n in methods if n.split(":")[-1] == "bc"), None)
    rows = []
    for name, s in methods.items():
        p = one_sided_greater(s["regions"], methods[baseline]["regions"]) if baseline and name != baseline else float("nan")
        rows.append([name, s["regions_mean"], s["regions_stderr"], s["goals_mean"], s["goals_stderr"], p, s["support_violations"]])
    write_csv(
        out_dir / "compare.csv",
        ["method", "regions_mean", "regions_stderr", "goals_mean", "goals_stderr", "p_regions_gt_bc", "support_violations"],
        rows,
    )
    from .svg import line_chart

    for col in ("regions_reached", "goals_reached"):
        series = {n: (list(range(len(c[col]))), c[col]) for n, c in curves.items()}
        line_chart(out_dir / f"compare_{col}.svg", series, "environment step", col.replace("_", " "))
    result = {"methods": methods, "baseline": baseline}
    write_json(out_dir / "compare.json", result)
    return result


def read_compare_csv(path) -> list[dict]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "method": r["method"],
            "regions_mean": float(r["regions_mean"]), "regions_stderr": float(r["regions_stderr"]),
            "goals_mean": float(r["goals_mean"]), "goals_stderr": float(r["goals_stderr"]),
            "p_regions_gt_bc": float(r["p_regions_gt_bc"]), "support_violations": int(r["support_violations"]),
        })
    return out


# --------------------------------------------------------------------------
# proposition suite


def two_goal_suite(cfg: ExperimentConfig, p: float) -> dict:
    """Oracle, demonstrator and trained-policy cover times on the two-goal tree."""
    from ..prop1 import bc_cover_time, direction_probabilities, expected_cover_time, two_goal_instance, verify_prop1

    depth = cfg["env.depth"]
    inst = two_goal_instance(p, depth)
    oracle = verify_prop1(inst, make_rng(cfg["seed"], "two-goal-oracle"), n_trials=10, lam=cfg["lambda"])
    bc_times = bc_cover_time(inst, make_rng(cfg["seed"], "two-goal-bc"), cfg["prop1.bc_trials"])
    analytic = expected_cover_time(direction_probabilities(inst).values())

    mdp, beta = inst.mdp, inst.beta
    ds = generate_dataset(mdp, beta, cfg["prop1.be_n_trajectories"], make_rng(cfg["seed"], "two-goal-data"))
    pol = BehavioralExplorationPolicy(
        inst.features, reg=cfg["lambda"], n_histories=cfg["prop1.be_n_histories"], random_state=cfg["seed"]
    ).fit(ds, n_actions=mdp.n_actions, support=support_table(beta))
    rng = make_rng(cfg["seed"], "two-goal-be")
    be_times, violations = [], 0
    for _ in range(cfg["prop1.be_trials"]):
        log = run_online(mdp, ExplorationAgent(pol, "max"), 3, rng, goals=sorted(inst.visitation), beta=beta)
        violations += log.metadata["support_violations"]
        reached = log.episode_final("goals_reached")
        hit = np.flatnonzero(reached >= inst.n_beta)
        be_times.append(int(hit[0]) + 1 if hit.size else 4)
    be_times = np.asarray(be_times)
    return {
        "p": p,
        "depth": depth,
        "oracle_cover_times": sorted({len(t["episodes"]) for t in oracle["episodes"] if t["success"]}),
        "oracle_success_rate": oracle["successes"] / oracle["trials"],
        "oracle_support_violations": oracle["support_violations"],
        "bc_cover_time_mean": float(bc_times.mean()),
        "bc_cover_time_analytic": analytic,
        "bc_relative_error": abs(float(bc_times.mean()) - analytic) / analytic,
        "be_within_3_rate": float(np.mean(be_times <= 3)),
        "be_cover_time_mean": float(be_times.mean()),
        "be_support_violations": int(violations),
    }


def prop1_suite(cfg: ExperimentConfig) -> dict:
    from ..prop1 import random_instance, sample_instance_params, verify_prop1

    instances = []
    for i in range(cfg["prop1.n_instances"]):
        params = sample_instance_params(cfg["seed"], i)
        inst = random_instance(params["n_beta"], params["depth"], params["branching"], params["seed"], params["trap"])
        rep = verify_prop1(inst, make_rng(cfg["seed"], "prop1-trials", i), cfg["prop1.n_trials"], cfg["lambda"])
        rep["index"] = i
        rep["trial_stream"] = [cfg["seed"], "prop1-trials", i]
        instances.append(rep)
    trials = sum(r["trials"] for r in instances)
    successes = sum(r["successes"] for r in instances)
    failures = [r["instance_seed"] for r in instances if r["successes"] != r["trials"]]
    return {
        "instances": instances,
        "trials": trials,
        "successes": successes,
        "success_rate": successes / trials if trials else float("nan"),
        "failed_instance_seeds": failures,
        "support_violations": int(sum(r["support_violations"] for r in instances)),
        "two_goal": [two_goal_suite(cfg, float(p)) for p in cfg["prop1.two_goal_p"]],
    }


# --------------------------------------------------------------------------
# output helpers


def _rounded(obj):
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else round_sig(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_rounded(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(_cell(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
