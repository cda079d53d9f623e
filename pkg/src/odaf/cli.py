"""Command-line entry point: ``odaf verify|train|eval|experiment|dataset``.

Exit codes: 0 success, 1 failed check or experiment, 2 bad arguments or inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from odaf import dataset as ds
from odaf import experiments as ex
from odaf.evaluation import evaluate
from odaf.mdp import compile_maze
from odaf.policy import SoftmaxPolicy

log = logging.getLogger("odaf")


class UsageError(Exception):
    """Bad user input; maps to exit code 2."""


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odaf", description="Outcome-driven offline RL on tabular mazes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the property and oracle checks")
    v.add_argument("--only", nargs="*", choices=sorted(_checks()), help="subset of checks")
    v.add_argument("--out", type=Path, help="directory for verify.json")

    t = sub.add_parser("train", help="train one policy from a config file")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--env", default="stitching", help="'stitching', 'open10' or a maze file")
    t.add_argument("--dataset", type=Path, help="transition file; defaults to the environment's standard dataset")
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="evaluate a saved policy greedily")
    e.add_argument("--policy", type=Path, required=True)
    e.add_argument("--env", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--horizon", type=int)

    x = sub.add_parser("experiment", help="run a headline experiment")
    x.add_argument("name", choices=["stitching", "mixratio", "ablation", "validation"])
    x.add_argument("--seeds", type=int, default=ex.DEFAULT_SEEDS)
    x.add_argument("--iterations", type=int, default=ex.DEFAULT_ITERATIONS)
    x.add_argument("--out", type=Path, required=True)
    x.add_argument("--no-figures", action="store_true")

    d = sub.add_parser("dataset", help="build, mix or describe transition files")
    dsub = d.add_subparsers(dest="action", required=True)
    mk = dsub.add_parser("make")
    mk.add_argument("--env", default="stitching")
    mk.add_argument("--kind", choices=["stitching", "expert", "random", "partial"], default="stitching")
    mk.add_argument("--episodes", type=int, default=10)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--out", type=Path, required=True)
    mx = dsub.add_parser("mix")
    mx.add_argument("--expert", type=Path, required=True)
    mx.add_argument("--random", type=Path, required=True)
    mx.add_argument("--ratio", type=float, required=True)
    mx.add_argument("--level", choices=["transition", "trajectory"], default="transition")
    mx.add_argument("--seed", type=int, default=0)
    mx.add_argument("--out", type=Path, required=True)
    st = dsub.add_parser("stats")
    st.add_argument("path", type=Path)
    return p


def _checks():
    from odaf.verification import CHECKS

    return CHECKS


def _env(spec: str):
    try:
        return ex.resolve_env(spec)
    except (ValueError, OSError) as err:
        raise UsageError(str(err)) from None


def _load_dataset(path: Path) -> ds.TransitionDataset:
    if not path.is_file():
        raise UsageError(f"dataset file not found: {path}")
    try:
        return ds.load(path)
    except ds.DatasetParseError as err:
        raise UsageError(str(err)) from None


def cmd_verify(args) -> int:
    from odaf.verification import run_verification_suite

    report = run_verification_suite(args.only)
    for c in report["checks"]:
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['check']}  ({c['seconds']:.1f}s)")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "verify.json").write_text(json.dumps(report, indent=2, default=float) + "\n", encoding="utf-8")
    return 0 if report["pass"] else 1


def cmd_train(args) -> int:
    from odaf.plotting import plot_learning_curves
    from odaf.trainer import TrainConfig, train

    if not args.config.is_file():
        raise UsageError(f"config file not found: {args.config}")
    try:
        config = TrainConfig.load(args.config)
    except ValueError as err:
        raise UsageError(f"{args.config}: {err}") from None
    maze = _env(args.env)
    if args.dataset:
        data = _load_dataset(args.dataset)
    elif maze.name == "stitching":
        data = ds.make_stitching_dataset(maze, ex.STITCH_EPISODES, config.seed)
    else:
        data = ex.partial_coverage_dataset(maze, config.seed)
    mdp = compile_maze(maze)
    if (data.num_states, data.num_actions) != (mdp.num_states, mdp.num_actions):
        raise UsageError("dataset does not match the environment's state and action counts")
    policy, diag = train(config, data, mdp, geometry=maze)
    report = evaluate(policy, mdp, config.eval_episodes, maze.horizon, seed=config.seed, maze=maze)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    diag.write_csv(out / "diagnostics.csv")
    policy.save(out / "policy.json")
    results = {"config": asdict(config), "env": args.env, "dataset": data.stats(), "evaluation": report.to_dict()}
    (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plot_learning_curves([{"method": config.regularizer, "_diag": diag}], out / "figures" / "learning_curve.png", args.env)
    print(f"return {report.return_mean:.3f} +- {report.return_std:.3f}; outputs in {out}")
    return 0


def cmd_eval(args) -> int:
    if not args.policy.is_file():
        raise UsageError(f"policy file not found: {args.policy}")
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    policy = SoftmaxPolicy.load(args.policy)
    maze = _env(args.env)
    mdp = compile_maze(maze)
    if policy.logits.shape != (mdp.num_states, mdp.num_actions):
        raise UsageError("policy shape does not match the environment")
    report = evaluate(policy, mdp, args.episodes, args.horizon or maze.horizon, args.seed, maze=maze)
    print(json.dumps(report.to_dict()))
    return 0


CRITERIA = {
    "stitching": ex.stitching_criteria,
    "mixratio": ex.mix_ratio_criteria,
    "ablation": ex.ablation_criteria,
    "validation": ex.validation_criteria,
}


def cmd_experiment(args) -> int:
    if args.seeds < 1 or args.iterations < 0:
        raise UsageError("--seeds must be at least 1 and --iterations non-negative")
    runners = {
        "stitching": ex.run_stitching_experiment,
        "mixratio": ex.run_mix_ratio_sweep,
        "ablation": ex.run_ablation,
        "validation": ex.run_validation_discrimination,
    }
    results = runners[args.name](seeds=args.seeds, iterations=args.iterations, out=args.out)
    if not args.no_figures:
        from odaf.plotting import render_experiment

        for path in render_experiment(args.name, results, args.out):
            log.info("figure %s", path)
    checks = CRITERIA[args.name](results)
    for key, ok in checks.items():
        if key != "pass":
            print(f"{'PASS' if ok else 'FAIL'}  {args.name}: {key}")
    (args.out / "criteria.json").write_text(json.dumps(checks, indent=2) + "\n", encoding="utf-8")
    return 0 if checks["pass"] else 1


def cmd_dataset(args) -> int:
    if args.action == "stats":
        print(json.dumps(_load_dataset(args.path).stats(), indent=2))
        return 0
    if args.action == "mix":
        if not 0.0 <= args.ratio <= 1.0:
            raise UsageError("--ratio must lie in [0, 1]")
        mixed = ds.mix_datasets(_load_dataset(args.expert), _load_dataset(args.random), args.ratio, args.seed, level=args.level)
        ds.save(mixed, args.out)
        print(json.dumps(mixed.stats()))
        return 0
    maze = _env(args.env)
    mdp = compile_maze(maze)
    if args.kind == "stitching":
        if maze.name != "stitching":
            raise UsageError("--kind stitching needs --env stitching")
        data = ds.make_stitching_dataset(maze, args.episodes, args.seed)
    elif args.kind == "partial":
        data = ex.partial_coverage_dataset(maze, args.seed)
    else:
        expert, random = ex.expert_random_pools(maze, args.seed, args.episodes, args.episodes)
        data = expert if args.kind == "expert" else random
    args.out.parent.mkdir(parents=True, exist_ok=True)
    ds.save(data, args.out)
    print(json.dumps(data.stats()))
    return 0


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "eval": cmd_eval, "experiment": cmd_experiment, "dataset": cmd_dataset}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"odaf: error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - report and signal failure
        log.debug("failure", exc_info=True)
        print(f"odaf: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
