"""Command-line entry point: ``behex <subcommand> --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 contract violation,
4 enumeration budget exceeded. Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..exceptions import ConfigError, ContractViolation, EmptySubspaceError, EnumerationBudgetError
from . import experiments as ex
from .config import load_config

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_BUDGET = 0, 2, 3, 4


def _gen_data(args) -> dict:
    cfg = load_config(args.config[0])
    env = ex.build_environment(cfg)
    ds = ex.generate(cfg, env)
    path = cfg.output_path("data.path")
    ds.dump(path)
    return {"dataset": str(path), "n_trajectories": len(ds), "mdp_fingerprint": ds.mdp_fingerprint}


def _train(args) -> dict:
    cfg = load_config(args.config[0])
    env = ex.build_environment(cfg)
    ds = ex.load_or_generate(cfg, env)
    pol = ex.train(cfg, env, ds)
    path = cfg.output_path("train.path")
    pol.save(path)
    return {"policy": str(path), "rows": len(pol.counts_), "n_buckets": pol.bucketizer_.n_buckets}


def _deploy(args) -> dict:
    s = ex.deploy(load_config(args.config[0]))
    return {k: s[k] for k in ("regions_mean", "regions_stderr", "goals_mean", "support_violations")}


def _calibrate(args) -> dict:
    r = ex.calibrate(load_config(args.config[0]))
    return {"spearman": r["spearman"], "regions_mean": [row["regions_mean"] for row in r["rows"]]}


def _ablate(args) -> dict:
    r = ex.ablate(load_config(args.config[0]))
    return {
        "online": r["online"]["regions_mean"],
        "first_state": r["first_state"]["regions_mean"],
        "none": r["none"]["regions_mean"],
        "bc": r["bc"]["regions_mean"],
        "p_online_gt_first_state": r["p_online_gt_first_state"],
        "none_rows_equal_bc": r["none_rows_equal_bc"],
    }


def _verify_prop1(args) -> dict:
    cfg = load_config(args.config[0])
    report = ex.prop1_suite(cfg)
    path = cfg.output_dir / "prop1_report.json"
    ex.write_json(path, report)
    return {"report": str(path), "success_rate": report["success_rate"], "support_violations": report["support_violations"]}


def _compare(args) -> dict:
    configs = [load_config(p) for p in args.config]
    out = Path(args.output) if args.output else configs[0].output_dir / "compare"
    r = ex.compare(configs, out)
    return {"csv": str(out / "compare.csv"), "methods": {k: v["regions_mean"] for k, v in r["methods"].items()}}


COMMANDS = {
    "gen-data": (_gen_data, "sample the demonstration dataset"),
    "train": (_train, "fit the behavioral-exploration policy"),
    "deploy": (_deploy, "run the trained policy online over several seeds"),
    "calibrate": (_calibrate, "sweep the exp value and record regions reached"),
    "ablate": (_ablate, "compare online, first-state and no-history deployment"),
    "verify-prop1": (_verify_prop1, "check the exact conditional on random trees"),
    "compare": (_compare, "tabulate and plot several methods side by side"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="behex", description="Tabular behavioral exploration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        nargs = "+" if name == "compare" else 1
        p.add_argument("--config", nargs=nargs, required=True, help="experiment config (TOML)")
        if name == "compare":
            p.add_argument("--output", help="output directory (default: <first output.dir>/compare)")
    return parser


def _fail(code: int, kind: str, exc: Exception) -> int:
    line = {"error": kind, "exit_code": code, "message": str(exc)}
    if isinstance(exc, ConfigError):
        line["missing"] = exc.missing
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = COMMANDS[args.command][0]
    try:
        result = handler(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except EnumerationBudgetError as exc:
        return _fail(EXIT_BUDGET, "budget", exc)
    except ContractViolation as exc:
        return _fail(EXIT_CONTRACT, "contract", exc)
    except (EmptySubspaceError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "validation", exc)
    print(ex.dumps(result), end="")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
