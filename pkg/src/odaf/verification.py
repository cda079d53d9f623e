"""Property and oracle checks run by ``odaf verify``.

Each check returns a dict with at least ``check`` (name) and ``pass`` (bool);
failures carry enough context (counterexample, trace, mismatched states) to
reproduce them. :func:`run_verification_suite` bundles them into one report.
"""

from __future__ import annotations

import time

import numpy as np

from odaf import ensemble as ens
from odaf.dataset import TransitionDataset, concatenate, make_stitching_dataset, rollout
from odaf.dynamics import fit_empirical, neighborhood_table, uncertainty_bound_terms
from odaf.experiments import STITCH_EPISODES
from odaf.mdp import GraphGeometry, TabularMdp, build_random_mdp, compile_maze, open_maze, stitching_maze
from odaf.operators import (
    AdmissibleActionSets,
    action_support_backup,
    greedy_path,
    oracle_value_iteration,
    outcome_driven_backup,
    random_mdps,
    standard_backup,
    statistical_gap_table,
    verify_contraction,
    verify_coverage_agreement,
    verify_convergence_rate,
)
from odaf.trainer import REGULARIZERS, ActorContext, TrainConfig, actor_loss_and_grad, score_table, train

REPORT_VERSION = 1


def _uniform(mdp: TabularMdp) -> np.ndarray:
    return np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)


def _model_for(mdp: TabularMdp, seed: int, episodes: int = 20, horizon: int = 10) -> TransitionDataset:
    return rollout(mdp, _uniform(mdp), episodes, horizon, seed=seed)


def check_contraction(num_mdps: int = 10, trials: int = 1_000, seed: int = 0, discount: float = 0.9) -> dict:
    """All three backups on random MDPs and their empirical models."""
    worst = {"standard": 0.0, "action_support": 0.0, "outcome_driven": 0.0}
    failures = []
    for i, mdp in enumerate(random_mdps(num_mdps, seed, max_states=20, max_actions=5, discount=discount)):
        dyn = fit_empirical(_model_for(mdp, seed + i), discount=discount)
        admissible = AdmissibleActionSets.from_dynamics(dyn)
        backups = {
            "standard": lambda q, m=mdp: standard_backup(q, m),
            "action_support": lambda q, d=dyn: action_support_backup(q, d),
            "outcome_driven": lambda q, d=dyn, adm=admissible: outcome_driven_backup(q, d, adm),
        }
        for name, backup in backups.items():
            res = verify_contraction(backup, discount, (mdp.num_states, mdp.num_actions), trials, seed=seed * 1000 + i)
            worst[name] = max(worst[name], res["max_ratio"])
            if not res["pass"]:
                failures.append({"mdp": i, "backup": name, **res})
    return {"check": "contraction", "pass": not failures, "max_ratio": worst, "discount": discount,
            "mdps": num_mdps, "trials_per_backup": trials, "failures": failures[:3]}


def check_uncertainty_bound(triples: int = 100, seed: int = 0, max_states: int = 15, tol: float = 1e-12) -> dict:
    """Expected successor uncertainty dominates U_min times the out-of-support mass, for every state."""
    rng = np.random.default_rng(seed)
    checked = 0
    worst_slack = np.inf
    for t in range(triples):
        n_s = int(rng.integers(2, max_states + 1))
        n_a = int(rng.integers(1, 5))
        mdp = build_random_mdp(n_s, n_a, int(rng.integers(1, min(n_s, 4) + 1)), 1.0, 0.9, seed=int(rng.integers(2**31)))
        data = rollout(mdp, _uniform(mdp), int(rng.integers(1, 4)), int(rng.integers(1, 6)), seed=int(rng.integers(2**31)))
        support = data.state_support
        probs = rng.dirichlet(np.ones(n_a), size=n_s)
        u_table = rng.uniform(0.0, 10.0, size=(n_s, n_a))
        # brute-force U_min over out-of-support pairs, independent of the helper
        outside = [(s, a) for s in range(n_s) if not support[s] for a in range(n_a)]
        u_min_enum = min((u_table[s, a] for s, a in outside), default=0.0)
        for s in range(n_s):
            lhs, u_min, ood = uncertainty_bound_terms(mdp.transition, support, s, probs, u_table)
            if u_min != u_min_enum:
                return {"check": "uncertainty_bound", "pass": False, "reason": "U_min mismatch", "triple": t, "state": s}
            slack = lhs - u_min_enum * ood
            worst_slack = min(worst_slack, slack)
            checked += 1
            if slack < -tol:
                return {"check": "uncertainty_bound", "pass": False, "triple": t, "state": s,
                        "lhs": lhs, "u_min": u_min_enum, "ood_mass": ood}
    return {"check": "uncertainty_bound", "pass": True, "triples": triples, "states_checked": checked,
            "min_slack": float(worst_slack)}


def check_convergence(num_mdps: int = 10, seed: int = 0) -> dict:
    """Geometric convergence of fixed-point iteration plus the shrinking statistical gap."""
    traces = []
    for i, mdp in enumerate(random_mdps(num_mdps, seed + 1, max_states=15, max_actions=4, discount=0.9)):
        dyn = fit_empirical(_model_for(mdp, seed + 100 + i), discount=mdp.discount)
        q0 = np.random.default_rng(seed + i).uniform(-10, 10, size=(mdp.num_states, mdp.num_actions))
        res = verify_convergence_rate(dyn, q0, k_max=150)
        res.pop("errors")
        traces.append(res)
    gap_mdp = build_random_mdp(8, 3, 3, 1.0, 0.9, seed=seed + 7)
    gap = statistical_gap_table(gap_mdp)
    ok = all(t["pass"] for t in traces) and gap["pass"]
    return {"check": "convergence", "pass": ok, "rate": traces, "gap": gap}


def _without_corridor(data: TransitionDataset, corridor: set[int]) -> TransitionDataset:
    keep = np.array([s not in corridor and sp not in corridor for s, sp in zip(data.states, data.next_states)])
    return data.subset(np.flatnonzero(keep))


def check_coverage_agreement(seed: int = 0) -> dict:
    """Coverage of the optimal corridor gives oracle agreement; removing it is the negative control."""
    maze = open_maze()
    mdp = compile_maze(maze)
    q_star = oracle_value_iteration(mdp)
    greedy = np.argmax(q_star, axis=1)
    expert = rollout(mdp, np.eye(mdp.num_actions)[greedy], 5, maze.horizon, seed=seed)
    random = rollout(mdp, _uniform(mdp), 40, maze.horizon, seed=seed + 1)
    covered = concatenate([expert, random], mdp.num_states, mdp.num_actions, mdp.fingerprint())
    positive = verify_coverage_agreement(mdp, fit_empirical(covered, discount=mdp.discount))
    path = greedy_path(mdp, greedy, horizon=maze.horizon)
    corridor = set(path[1:-1])
    uncovered = _without_corridor(covered, corridor)
    negative = verify_coverage_agreement(mdp, fit_empirical(uncovered, discount=mdp.discount), require_agreement=False)
    return {
        "check": "coverage_agreement",
        "pass": positive["pass"] and positive["optimal_states_covered"],
        "covered": positive,
        "negative_control": negative,
        "corridor_length": len(corridor),
    }


def check_unseen_uncertainty(seeds: int = 5, iterations: int = 2_000, min_count: int = 10) -> dict:
    """After data-only critic training, unseen pairs are more uncertain than well-visited ones."""
    maze = stitching_maze()
    mdp = compile_maze(maze)
    rows = []
    for seed in range(seeds):
        data = make_stitching_dataset(maze, STITCH_EPISODES, seed)
        reachable = np.zeros((mdp.num_states, mdp.num_actions), dtype=bool)
        reachable[[s for s in maze.floor_states() if not mdp.terminal[s]]] = True
        unseen = reachable & ~data.pair_support
        frequent = data.counts_sa >= min_count
        cfg = TrainConfig(iterations=iterations, regularizer="none", seed=seed, eval_every=iterations)
        _, diag = train(cfg, data, mdp, geometry=maze)
        u = diag.ensemble.uncertainty_table()
        rows.append({
            "seed": seed,
            "unseen_fraction": float(unseen.sum() / reachable.sum()),
            "median_unseen": float(np.median(u[unseen])),
            "median_frequent": float(np.median(u[frequent])),
        })
    ok = all(r["unseen_fraction"] >= 0.2 and r["median_unseen"] > r["median_frequent"] for r in rows)
    return {"check": "unseen_uncertainty", "pass": ok, "seeds": rows}


def random_actor_problem(rng: np.random.Generator, regularizer: str) -> tuple[np.ndarray, ActorContext, np.ndarray]:
    """A random (logits, context, states) triple for the actor loss, built from a random MDP."""
    n_s = int(rng.integers(3, 9))
    n_a = int(rng.integers(2, 5))
    mdp = build_random_mdp(n_s, n_a, int(rng.integers(1, 4)), 1.0, 0.9, seed=int(rng.integers(2**31)))
    data = rollout(mdp, _uniform(mdp), int(rng.integers(2, 6)), 6, seed=int(rng.integers(2**31)))
    dyn = fit_empirical(data, smoothing=float(rng.choice([0.0, 0.5])), discount=0.9)
    e = ens.init(4, n_s, n_a, 1.0, seed=int(rng.integers(2**31)), beta_u=float(rng.uniform(0.5, 5.0)))
    e.targets += rng.normal(size=e.targets.shape)
    eval_probs = rng.dirichlet(np.ones(n_a), size=n_s)
    ctx = ActorContext(q_min=e.min_target(), entropy_coef=float(rng.uniform(0.0, 0.5)), regularizer=regularizer,
                       weight=float(rng.uniform(0.1, 2.0)), dyn=dyn)
    if regularizer == "odaf":
        ctx.scores = score_table(dyn, e, eval_probs)
        ctx.neighbors = neighborhood_table(GraphGeometry.from_mdp(mdp), n_s, 1)
    elif regularizer == "action_support":
        ctx.unseen = ~data.pair_support
    elif regularizer == "state_recovery":
        visited = data.counts_s > 0
        nxt = data.counts_sas.sum(axis=1).astype(float)
        nxt[visited] /= data.counts_s[visited, None]
        ctx.visited, ctx.empirical_next = visited.astype(float), nxt
    elif regularizer == "behavior_clone":
        ctx.visited = (data.counts_s > 0).astype(float)
        ctx.behavior = data.behavior_policy()
    logits = rng.normal(scale=2.0, size=(n_s, n_a))
    states = rng.integers(n_s, size=int(rng.integers(1, 12)))
    return logits, ctx, states


def _near_kink(logits: np.ndarray, ctx: ActorContext, states: np.ndarray, margin: float) -> bool:
    from odaf.policy import softmax_rows

    pi = softmax_rows(logits)
    if ctx.regularizer == "odaf":
        f = (pi * ctx.scores).sum(axis=1)
        for s in states:
            vals = np.unique(f[ctx.neighbors[s]])
            if len(vals) > 1 and np.sort(vals)[-1] - np.sort(vals)[-2] < margin:
                return True
    if ctx.regularizer == "state_recovery":
        diff = np.einsum("sa,sat->st", pi, ctx.dyn.probs) - ctx.empirical_next
        if np.any((np.abs(diff) < margin) & (np.abs(diff) > 0)):
            return True
    return False


def check_gradients(configs: int = 100, seed: int = 0, h: float = 1e-6, rtol: float = 1e-6) -> dict:
    """Analytic actor gradients against central finite differences of the full loss."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    skipped = 0
    while done < configs:
        reg = REGULARIZERS[done % len(REGULARIZERS)]
        logits, ctx, states = random_actor_problem(rng, reg)
        if _near_kink(logits, ctx, states, margin=1e-4):
            skipped += 1
            continue
        _, grad, _ = actor_loss_and_grad(logits, ctx, states)
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, down = logits.copy(), logits.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (actor_loss_and_grad(up, ctx, states)[0] - actor_loss_and_grad(down, ctx, states)[0]) / (2 * h)
        scale = max(np.abs(grad).max(), np.abs(numeric).max(), 1e-3)
        err = float(np.abs(grad - numeric).max() / scale)
        worst = max(worst, err)
        if err > rtol:
            return {"check": "gradients", "pass": False, "config": done, "regularizer": reg, "relative_error": err,
                    "analytic": grad.tolist(), "numeric": numeric.tolist()}
        done += 1
    return {"check": "gradients", "pass": True, "configs": configs, "skipped_near_kinks": skipped, "max_relative_error": worst}


CHECKS = {
    "contraction": check_contraction,
    "uncertainty_bound": check_uncertainty_bound,
    "convergence": check_convergence,
    "coverage_agreement": check_coverage_agreement,
    "unseen_uncertainty": check_unseen_uncertainty,
    "gradients": check_gradients,
}


def run_verification_suite(only: list[str] | None = None) -> dict:
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        start = time.perf_counter()
        res = fn()
        res["seconds"] = round(time.perf_counter() - start, 3)
        results.append(res)
    return {"version": REPORT_VERSION, "pass": all(r["pass"] for r in results), "checks": results}
