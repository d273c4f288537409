import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from behex._rng import make_rng
from behex.envs import build_grid_maze, build_two_goal_tree, terminal_feature_map
from behex.exceptions import ConfigError, ContractViolation, EnumerationBudgetError
from behex.harness import experiments as ex
from behex.harness.cli import main
from behex.harness.config import SCHEMA, load_config, parse_config
from behex.harness.online import (
    METRIC_COLUMNS,
    Agent,
    ExplorationAgent,
    MetricsLog,
    TableAgent,
    run_online,
)
from behex.harness.svg import line_chart
from behex.baselines import RandomPolicy
from behex.mdp import generate_dataset
from behex.policy import BehavioralExplorationPolicy

from conftest import CONFIGS


# ---------------------------------------------------------------- online loop


def test_random_walk_covers_small_grid():
    mdp, _, fmap, maze = build_grid_maze("S..\n...\n...", horizon=20)
    log = run_online(mdp, TableAgent(RandomPolicy(4), "random"), 50, make_rng(0), fmap, regions=maze.regions)
    assert log.final("regions_reached") == 9


def test_metrics_invariants(tmp_path):
    mdp, beta, fmap, maze = build_grid_maze("S..\n.#.\n..G", horizon=6)
    log = run_online(mdp, TableAgent(RandomPolicy(4), "r"), 5, make_rng(1), fmap, regions=maze.regions, goals=maze.goals)
    steps = log.column("step")
    assert np.all(np.diff(steps) > 0)
    assert np.all(np.diff(log.column("regions_reached")) >= 0)
    assert np.all(np.diff(log.column("coverage")) >= 0)
    assert len(log.rows) == 5 * (mdp.horizon + 1)
    log.to_csv(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS)
    back = MetricsLog.from_csv(tmp_path / "m.csv")
    assert back.rows[-1][:4] == log.rows[-1][:4]


def test_run_online_is_deterministic(tmp_path):
    mdp, _, fmap, maze = build_grid_maze("S...\n....", horizon=8)
    for name in ("a", "b"):
        run_online(mdp, TableAgent(RandomPolicy(4), "r"), 3, make_rng(5), fmap, regions=maze.regions).to_csv(tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_be_covers_two_goal_tree_by_episode_two():
    mdp, beta = build_two_goal_tree(0.1, 3)
    fmap = terminal_feature_map(mdp)
    ds = generate_dataset(mdp, beta, 5000, make_rng(0))
    pol = BehavioralExplorationPolicy(fmap, n_histories=8).fit(ds, n_actions=2)
    hits = 0
    rng = make_rng(3)
    for _ in range(100):
        log = run_online(mdp, ExplorationAgent(pol), 3, rng, goals=(3, 6), beta=beta)
        hits += log.episode_final("goals_reached")[1] == 2
        assert log.metadata["support_violations"] == 0
    assert hits >= 95


def test_schedule_too_short():
    mdp, beta = build_two_goal_tree(0.5, 1)
    ds = generate_dataset(mdp, beta, 20, make_rng(0))
    pol = BehavioralExplorationPolicy(terminal_feature_map(mdp)).fit(ds)
    with pytest.raises(ValueError):
        run_online(mdp, ExplorationAgent(pol, exp_schedule=["max"]), 2, make_rng(0))
    with pytest.raises(ValueError):
        ExplorationAgent(pol, mode="sideways")


def test_contract_violation_propagates():
    class Bad(Agent):
        def act(self, state, step, prefix, rng):
            return 9

    mdp, _ = build_two_goal_tree(0.5, 1)
    with pytest.raises(ContractViolation):
        run_online(mdp, Bad(), 1, make_rng(0))


# ---------------------------------------------------------------- config


def test_missing_keys_listed_together():
    with pytest.raises(ConfigError) as info:
        parse_config("[env]\nhorizon = 10\n")
    assert set(info.value.missing) == {"seed", "env.kind", "output.dir"}


def test_config_problems_reported():
    text = 'seed = "x"\nbogus = 1\n[env]\nkind = "cave"\n[output]\ndir = "o"\n'
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    msg = str(info.value)
    assert "seed" in msg and "bogus" in msg and "cave" in msg


def test_maze_needs_layout(tmp_path):
    with pytest.raises(ConfigError):
        parse_config('seed = 0\n[env]\nkind = "maze"\n[output]\ndir = "o"\n')
    with pytest.raises(ConfigError):
        parse_config('seed = 0\n[env]\nkind = "maze"\nlayout_file = "nope.txt"\n[output]\ndir = "o"\n', tmp_path)


def test_defaults_filled():
    cfg = parse_config('seed = 1\n[env]\nkind = "two_goal_tree"\n[output]\ndir = "o"\n')
    assert cfg["lambda"] == 0.01 and cfg["train.n_buckets"] == 8 and cfg["deploy.exp"] == "max"
    assert all(len(v) == 3 for v in SCHEMA.values())


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        ex.build_environment(cfg)


# ---------------------------------------------------------------- experiments


@pytest.fixture(scope="module")
def gridworld(tmp_path_factory):
    import shutil

    d = tmp_path_factory.mktemp("grid")
    shutil.copy(CONFIGS / "standard_maze.txt", d)
    text = (CONFIGS / "gridworld.toml").read_text().replace('dir = "../runs/gridworld"', 'dir = "out"')
    (d / "grid.toml").write_text(text.replace("n_seeds = 20", "n_seeds = 8"))
    cfg = load_config(d / "grid.toml")
    env = ex.build_environment(cfg)
    policy, dataset = ex.load_or_train(cfg, env)
    return cfg, env, policy, dataset


def test_single_bucket_calibration_is_flat(gridworld):
    cfg, env, _, dataset = gridworld
    flat = BehavioralExplorationPolicy(**{**ex.policy_params(cfg, env.feature_map), "n_buckets": 1}).fit(
        dataset, n_actions=4, support=ex.support_table(env.beta)
    )
    res = ex.calibration_sweep(cfg, env, flat, dataset, [0.0, 1.0, 2.0])
    assert len({r["regions_mean"] for r in res["rows"]}) == 1


def test_bottom_bucket_not_above_bc(gridworld):
    cfg, env, policy, dataset = gridworld
    res = ex.calibration_sweep(cfg, env, policy, dataset)
    bc = ex.summarize_logs(ex.deploy_seeds(cfg, env, lambda: ex.make_agent("bc", cfg, env, policy, dataset)))
    bottom = res["rows"][0]
    assert bottom["regions_mean"] <= bc["regions_mean"] + max(bc["regions_stderr"], bottom["regions_stderr"])
    with pytest.raises(ConfigError):
        ex.calibration_sweep(cfg, env, policy, dataset, [0.1, 0.2])


def test_ablation_shape(gridworld):
    cfg, env, policy, dataset = gridworld
    res = ex.ablation_history(cfg, env, policy, dataset)
    fs, bc = res["first_state"], res["bc"]
    assert fs["regions_mean"] >= bc["regions_mean"] - max(fs["regions_stderr"], bc["regions_stderr"])
    assert res["none"]["regions"] == bc["regions"]
    assert res["none_rows_equal_bc"]


def test_compare_identical_methods_and_round_trip(gridworld, tmp_path):
    cfg, _, _, _ = gridworld
    cfg.values["compare.methods"] = ["be", "bc"]
    other = ex.ExperimentConfig(dict(cfg.values, **{"compare.label": "twin"}), cfg.base_dir)
    res = ex.compare([cfg, other], tmp_path)
    assert res["methods"]["be"]["regions"] == res["methods"]["twin:be"]["regions"]
    rows = ex.read_compare_csv(tmp_path / "compare.csv")
    assert [r["method"] for r in rows] == ["be", "bc", "twin:be", "twin:bc"]
    assert rows[0]["regions_mean"] == pytest.approx(res["methods"]["be"]["regions_mean"], abs=1e-9)
    for name in ("compare_regions_reached.svg", "compare_goals_reached.svg"):
        ET.parse(tmp_path / name)


def test_compare_budget_mismatch(gridworld, tmp_path):
    cfg, _, _, _ = gridworld
    other = ex.ExperimentConfig(dict(cfg.values, **{"deploy.n_episodes": 9}), cfg.base_dir)
    with pytest.raises(ConfigError):
        ex.compare([cfg, other], tmp_path)


def test_one_sided_test_edge_cases():
    assert ex.one_sided_greater([2, 2], [1, 1]) == 0.0
    assert ex.one_sided_greater([1, 1], [1, 1]) == 1.0
    assert ex.one_sided_greater([5, 6, 7], [1, 2, 3]) < 0.05


def test_json_dump_rounds_floats():
    text = ex.dumps({"b": 0.1 + 0.2, "a": [np.float64(1 / 3)], "c": float("nan")})
    data = json.loads(text)
    assert data == {"a": [0.333333333333], "b": 0.3, "c": None}
    assert text.index('"a"') < text.index('"b"')


def test_svg_chart(tmp_path):
    text = line_chart(tmp_path / "c.svg", {"x": ([0, 1, 2], [0, 1, 4]), "y<&": ([0, 2], [1, 1])}, "step", "value")
    root = ET.fromstring(text)
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("polyline")]) == 2


# ---------------------------------------------------------------- cli


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[env]\n")
    assert main(["gen-data", "--config", str(bad)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and err["exit_code"] == 2
    assert set(err["missing"]) == {"seed", "env.kind", "output.dir"}
    assert main(["train", "--config", str(tmp_path / "absent.toml")]) == 2


def test_cli_budget_and_contract_exit_codes(config_copy, monkeypatch, capsys):
    path = config_copy("two_goal.toml")

    def budget(*a, **k):
        raise EnumerationBudgetError("too many suffixes")

    def contract(*a, **k):
        raise ContractViolation("bad action")

    monkeypatch.setattr(ex, "deploy", budget)
    assert main(["deploy", "--config", str(path)]) == 4
    monkeypatch.setattr(ex, "deploy", contract)
    assert main(["deploy", "--config", str(path)]) == 3
    lines = capsys.readouterr().err.strip().splitlines()
    assert [json.loads(ln)["exit_code"] for ln in lines] == [4, 3]


def test_cli_gen_data_and_train(config_copy, capsys):
    path = config_copy("two_goal.toml")
    assert main(["gen-data", "--config", str(path)]) == 0
    assert main(["train", "--config", str(path)]) == 0
    out = path.parent / "out"
    assert (out / "dataset.jsonl").is_file() and (out / "policy.txt").is_file()
    pol = BehavioralExplorationPolicy.load(out / "policy.txt")
    np.testing.assert_array_equal(pol.action_proba(0, [0, 1, 2, 3]), [0.0, 1.0])
