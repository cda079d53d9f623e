"""Headline experiments: stitching, mixed-ratio sweep, ablation and validation-score discrimination.

Every runner returns a JSON-ready dict and, given ``out``, writes one
diagnostics CSV per (method, seed) plus ``results.json`` and
``trajectories.json`` under that directory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from odaf.dataset import TransitionDataset, make_stitching_dataset, mix_datasets, rollout
from odaf.evaluation import evaluate, expected_return, normalized_score
from odaf.mdp import DETOUR_ACTIONS, GridMaze, TabularMdp, compile_maze, open_maze, stitching_maze
from odaf.operators import oracle_value_iteration
from odaf.trainer import TrainConfig, train, validation_score

log = logging.getLogger(__name__)

DEFAULT_SEEDS = 5
DEFAULT_ITERATIONS = 10_000
MIX_RATIOS = (0.5, 0.6, 0.7, 0.8, 0.9)
STITCH_EPISODES = 10
EXPERT_EPISODES = 50
RANDOM_EPISODES = 40
# the partial-coverage maze keeps only a thin slice of expert data
PARTIAL_EXPERT_EPISODES = 30
PARTIAL_RATIO = 0.9
DETOUR_TOLERANCE = 0.05


@dataclass
class ExperimentSpec:
    name: str
    env: str
    recipe: dict
    methods: list[tuple[str, TrainConfig]]
    seeds: tuple[int, ...]
    out: Path | None = None

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("an experiment needs at least one seed")
        names = [m for m, _ in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"method names must be unique, got {names}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "env": self.env,
            "recipe": self.recipe,
            "methods": {m: asdict(c) for m, c in self.methods},
            "seeds": list(self.seeds),
        }


@dataclass
class Environment:
    maze: GridMaze
    mdp: TabularMdp = field(init=False)

    def __post_init__(self) -> None:
        self.mdp = compile_maze(self.maze)


def resolve_env(spec: str) -> GridMaze:
    """``stitching``, ``open10`` or a path to a maze text file."""
    if spec == "stitching":
        return stitching_maze()
    if spec == "open10":
        return open_maze()
    path = Path(spec)
    if path.is_file():
        return GridMaze.load(path)
    raise ValueError(f"unknown environment {spec!r}: use 'stitching', 'open10' or a maze file")


def normalization(maze: GridMaze) -> dict:
    """Random-policy and oracle returns used as the 0 and 100 anchors."""
    mdp = compile_maze(maze)
    q_star = oracle_value_iteration(mdp)
    uniform = np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
    return {
        "random_return": expected_return(uniform, mdp, maze.horizon),
        "optimal_return": expected_return(np.argmax(q_star, axis=1), mdp, maze.horizon),
        "horizon": maze.horizon,
        "mdp_fingerprint": mdp.fingerprint(),
    }


def expert_random_pools(maze: GridMaze, seed: int, expert_episodes: int, random_episodes: int) -> tuple[TransitionDataset, TransitionDataset]:
    mdp = compile_maze(maze)
    q_star = oracle_value_iteration(mdp)
    expert = np.eye(mdp.num_actions)[np.argmax(q_star, axis=1)]
    uniform = np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
    ss = np.random.SeedSequence([seed, 17]).generate_state(2)
    return (
        rollout(mdp, expert, expert_episodes, maze.horizon, seed=int(ss[0])),
        rollout(mdp, uniform, random_episodes, maze.horizon, seed=int(ss[1])),
    )


def partial_coverage_dataset(maze: GridMaze, seed: int) -> TransitionDataset:
    expert, random = expert_random_pools(maze, seed, PARTIAL_EXPERT_EPISODES, RANDOM_EPISODES)
    return mix_datasets(expert, random, PARTIAL_RATIO, seed)


def base_config(iterations: int, **overrides) -> TrainConfig:
    return TrainConfig(iterations=iterations, eval_every=max(1, iterations // 10), **overrides)


def stitching_methods(iterations: int) -> list[tuple[str, TrainConfig]]:
    return [(name, base_config(iterations, regularizer=name))
            for name in ("odaf", "action_support", "state_recovery", "behavior_clone", "none")]


def run_arm(method: str, config: TrainConfig, dataset: TransitionDataset, env: Environment, out: Path | None, tag: str) -> dict:
    policy, diag = train(config, dataset, env.mdp, geometry=env.maze)
    report = evaluate(policy, env.mdp, config.eval_episodes, env.maze.horizon, seed=config.seed, maze=env.maze)
    off_support = [[int(s), int(a)] for s, a in zip(report.trajectory, report.actions) if not dataset.pair_support[s, a]]
    if out is not None:
        (out / "diagnostics").mkdir(parents=True, exist_ok=True)
        diag.write_csv(out / "diagnostics" / f"{tag}.csv")
        (out / "policies").mkdir(exist_ok=True)
        policy.save(out / "policies" / f"{tag}.json")
    last = diag.records[-1]
    return {
        "method": method,
        "seed": config.seed,
        "tag": tag,
        "config": asdict(config),
        "return_mean": report.return_mean,
        "return_std": report.return_std,
        "stitched": report.stitched,
        "off_support_pairs": off_support,
        "final_ood_mass": last["ood_mass"],
        "final_odaf_penalty": last["odaf_penalty"],
        "trajectory": report.trajectory,
        "actions": report.actions,
        "_diag": diag,
        "_policy": policy,
    }


def _public(run: dict) -> dict:
    return {k: v for k, v in run.items() if not k.startswith("_")}


def _write(out: Path | None, results: dict, runs: list[dict]) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    trajectories = [{"tag": r["tag"], "method": r["method"], "seed": r["seed"], "states": r["trajectory"], "actions": r["actions"]}
                    for r in runs]
    (out / "trajectories.json").write_text(json.dumps(trajectories, indent=1) + "\n", encoding="utf-8")


def _by_method(runs: list[dict], key: str = "method") -> dict[str, list[dict]]:
    groups: dict[str, list[dict]] = {}
    for r in runs:
        groups.setdefault(r[key], []).append(r)
    return groups


def run_stitching_experiment(
    seeds: int = DEFAULT_SEEDS,
    iterations: int = DEFAULT_ITERATIONS,
    out: Path | None = None,
    methods: list[tuple[str, TrainConfig]] | None = None,
) -> dict:
    maze = stitching_maze()
    env = Environment(maze)
    spec = ExperimentSpec("stitching", "stitching", {"episodes_per_family": STITCH_EPISODES},
                          methods or stitching_methods(iterations), tuple(range(seeds)), out)
    runs = []
    stats = None
    for seed in spec.seeds:
        data = make_stitching_dataset(maze, STITCH_EPISODES, seed)
        stats = stats or data.stats()
        for name, cfg in spec.methods:
            runs.append(run_arm(name, replace(cfg, seed=seed), data, env, out, f"{name}-seed{seed}"))
            log.info("stitching %s seed %d: return %.2f", name, seed, runs[-1]["return_mean"])

    detour_return = float(sum(maze.step_reward for _ in DETOUR_ACTIONS[:-1]) + maze.goal_reward)
    thresholds = {
        "max_dataset_return": float(stats["return_max"]),
        "detour_return": detour_return,
        "detour_ceiling": detour_return + DETOUR_TOLERANCE * abs(detour_return),
        "oracle_return": normalization(maze)["optimal_return"],
    }
    summary = {}
    for name, rs in _by_method(runs).items():
        summary[name] = {
            "returns": [r["return_mean"] for r in rs],
            "median_return": float(np.median([r["return_mean"] for r in rs])),
            "stitched": [r["stitched"] for r in rs],
            "beats_dataset": sum(r["return_mean"] > thresholds["max_dataset_return"] and r["off_support_pairs"] != [] for r in rs),
            "within_detour": sum(r["return_mean"] <= thresholds["detour_ceiling"] for r in rs),
            "uses_off_support": sum(r["off_support_pairs"] != [] for r in rs),
        }
    results = {
        "experiment": spec.to_dict(),
        "dataset_stats": stats,
        "thresholds": thresholds,
        "summary": summary,
        "runs": [_public(r) for r in runs],
    }
    _write(out, results, runs)
    results["_runs"] = runs
    return results


def run_mix_ratio_sweep(
    ratios: tuple[float, ...] = MIX_RATIOS,
    seeds: int = DEFAULT_SEEDS,
    iterations: int = DEFAULT_ITERATIONS,
    out: Path | None = None,
) -> dict:
    maze = open_maze()
    env = Environment(maze)
    methods = [(name, base_config(iterations, regularizer=name)) for name in ("odaf", "action_support")]
    spec = ExperimentSpec("mixratio", "open10",
                          {"ratios": list(ratios), "expert_episodes": EXPERT_EPISODES, "random_episodes": RANDOM_EPISODES},
                          methods, tuple(range(seeds)), out)
    norm = normalization(maze)
    runs = []
    for ratio in ratios:
        for seed in spec.seeds:
            expert, random = expert_random_pools(maze, seed, EXPERT_EPISODES, RANDOM_EPISODES)
            data = mix_datasets(expert, random, ratio, seed)
            for name, cfg in spec.methods:
                run = run_arm(name, replace(cfg, seed=seed), data, env, out, f"{name}-ratio{ratio:.2f}-seed{seed}")
                run["ratio"] = ratio
                run["normalized_score"] = normalized_score(run["return_mean"], norm["random_return"], norm["optimal_return"])
                runs.append(run)
                log.info("mixratio %.2f %s seed %d: score %.1f", ratio, name, seed, run["normalized_score"])
    curve = []
    for ratio in ratios:
        row = {"ratio": ratio}
        for name, _ in spec.methods:
            scores = [r["normalized_score"] for r in runs if r["ratio"] == ratio and r["method"] == name]
            row[name] = {"scores": scores, "median": float(np.median(scores))}
        curve.append(row)
    results = {"experiment": spec.to_dict(), "normalization": norm, "curve": curve, "runs": [_public(r) for r in runs]}
    _write(out, results, runs)
    results["_runs"] = runs
    return results


def run_ablation(seeds: int = DEFAULT_SEEDS, iterations: int = DEFAULT_ITERATIONS, out: Path | None = None) -> dict:
    """Same configuration with the penalty weight at 0.3 and at 0, on two mazes, paired by seed."""
    arms = [("odaf", base_config(iterations, regularizer="odaf", beta_odaf=0.3)),
            ("odaf_no_penalty", base_config(iterations, regularizer="odaf", beta_odaf=0.0))]
    spec = ExperimentSpec("ablation", "stitching+open10-partial",
                          {"partial_expert_episodes": PARTIAL_EXPERT_EPISODES, "random_episodes": RANDOM_EPISODES,
                           "random_ratio": PARTIAL_RATIO, "episodes_per_family": STITCH_EPISODES},
                          arms, tuple(range(seeds)), out)
    runs = []
    tables = {}
    for env_name, maze in (("stitching", stitching_maze()), ("partial", open_maze())):
        env = Environment(maze)
        for seed in spec.seeds:
            data = make_stitching_dataset(maze, STITCH_EPISODES, seed) if env_name == "stitching" else partial_coverage_dataset(maze, seed)
            for name, cfg in spec.methods:
                run = run_arm(name, replace(cfg, seed=seed), data, env, out, f"{env_name}-{name}-seed{seed}")
                run["env"] = env_name
                runs.append(run)
        on = {r["seed"]: r for r in runs if r["env"] == env_name and r["method"] == "odaf"}
        off = {r["seed"]: r for r in runs if r["env"] == env_name and r["method"] == "odaf_no_penalty"}
        diffs = [on[s]["return_mean"] - off[s]["return_mean"] for s in spec.seeds]
        tables[env_name] = {
            "paired_differences": diffs,
            "median_difference": float(np.median(diffs)),
            "odaf_returns": [on[s]["return_mean"] for s in spec.seeds],
            "ablated_returns": [off[s]["return_mean"] for s in spec.seeds],
            "odaf_ood_mass": float(np.mean([on[s]["final_ood_mass"] for s in spec.seeds])),
            "ablated_ood_mass": float(np.mean([off[s]["final_ood_mass"] for s in spec.seeds])),
        }
    results = {"experiment": spec.to_dict(), "tables": tables, "runs": [_public(r) for r in runs]}
    _write(out, results, runs)
    results["_runs"] = runs
    return results


def true_outcome_in_support(mdp: TabularMdp, support: np.ndarray) -> np.ndarray:
    """(S, A) flag: every true successor of the pair lies inside ``support``."""
    return ~(mdp.transition[:, :, ~support] > 0).any(axis=2)


def run_validation_discrimination(seeds: int = DEFAULT_SEEDS, iterations: int = DEFAULT_ITERATIONS, out: Path | None = None) -> dict:
    """Score every action at in-support states; split by whether its true outcome stays in support."""
    maze = open_maze()
    env = Environment(maze)
    cfg = base_config(iterations, regularizer="odaf")
    rows = []
    per_seed = []
    runs = []
    for seed in range(seeds):
        data = partial_coverage_dataset(maze, seed)
        run = run_arm("odaf", replace(cfg, seed=seed), data, env, out, f"validation-seed{seed}")
        runs.append(run)
        diag = run["_diag"]
        inside = true_outcome_in_support(env.mdp, diag.dynamics.state_support)
        states = np.flatnonzero(diag.dynamics.state_support & ~diag.dynamics.terminal)
        ins, outs = [], []
        for s in states:
            for a in range(env.mdp.num_actions):
                score = validation_score(diag.dynamics, diag.ensemble, diag.eval_policy, int(s), a)
                (ins if inside[s, a] else outs).append(score)
                rows.append({"seed": seed, "state": int(s), "action": a, "outcome_in_support": bool(inside[s, a]), "score": score})
        per_seed.append({"seed": seed, "median_in": float(np.median(ins)), "median_out": float(np.median(outs)) if outs else None,
                         "n_in": len(ins), "n_out": len(outs)})
    med_in = float(np.median([r["score"] for r in rows if r["outcome_in_support"]]))
    med_out = float(np.median([r["score"] for r in rows if not r["outcome_in_support"]]))
    results = {
        "experiment": {"name": "validation", "env": "open10-partial", "config": asdict(cfg), "seeds": list(range(seeds))},
        "median_in_support": med_in,
        "median_out_of_support": med_out,
        "ratio": med_out / med_in if med_in > 0 else float("inf"),
        "per_seed": per_seed,
        "scores": rows,
    }
    _write(out, results, runs)
    return results


def stitching_criteria(results: dict, quorum: int = 4) -> dict:
    s = results["summary"]
    odaf_ok = s["odaf"]["beats_dataset"] >= quorum
    support_ok = s["action_support"]["within_detour"] >= quorum
    return {"odaf_beats_dataset_with_off_support_pair": odaf_ok, "action_support_within_detour": support_ok,
            "pass": odaf_ok and support_ok}


def mix_ratio_criteria(results: dict) -> dict:
    curve = {row["ratio"]: row for row in results["curve"]}
    lo, hi = curve[min(curve)], curve[max(curve)]
    ordering = hi["odaf"]["median"] >= hi["action_support"]["median"]
    monotone = all(lo[m]["median"] >= hi[m]["median"] for m in ("odaf", "action_support"))
    return {"odaf_at_least_action_support_at_highest_ratio": ordering, "degradation_monotone": monotone,
            "pass": ordering and monotone}


def ablation_criteria(results: dict) -> dict:
    t = results["tables"]["partial"]
    better = t["median_difference"] > 0
    ood = t["odaf_ood_mass"] <= t["ablated_ood_mass"]
    return {"median_paired_difference_positive": better, "ood_mass_not_higher": ood, "pass": better and ood}


def validation_criteria(results: dict, factor: float = 2.0) -> dict:
    ok = results["median_out_of_support"] >= factor * results["median_in_support"]
    return {"out_of_support_at_least_factor": ok, "pass": ok}
