"""Exact tabular Bellman backups, fixed-point solving and the checks built on them.

Q tables are plain ``(S, A)`` float arrays. A *model* is anything exposing a
transition tensor and a reward table: a :class:`~odaf.mdp.TabularMdp` or an
:class:`~odaf.dynamics.EmpiricalDynamics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from odaf.dynamics import EmpiricalDynamics, action_ood_mass
from odaf.mdp import TabularMdp, build_random_mdp

Backup = Callable[[np.ndarray], np.ndarray]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


def _model(model) -> tuple[np.ndarray, np.ndarray, float]:
    if isinstance(model, TabularMdp):
        return model.transition, model.reward, model.discount
    if isinstance(model, EmpiricalDynamics):
        return model.probs, model.rewards, model.discount
    p, r, g = model
    return np.asarray(p), np.asarray(r), float(g)


@dataclass(frozen=True, eq=False)
class AdmissibleActionSets:
    """Actions whose predicted outcomes all stay inside the state support.

    ``fallback_action[s]`` is used where no action is admissible: the action
    with the least out-of-support mass, lowest index on ties.
    """

    mask: np.ndarray
    fallback_action: np.ndarray

    @classmethod
    def from_dynamics(cls, dyn: EmpiricalDynamics) -> "AdmissibleActionSets":
        ood = action_ood_mass(dyn)
        mask = (ood == 0.0) & ~dyn.fallback
        fallback = np.argmin(ood, axis=1)
        return cls(mask, fallback)

    @classmethod
    def everything(cls, num_states: int, num_actions: int) -> "AdmissibleActionSets":
        return cls(np.ones((num_states, num_actions), dtype=bool), np.zeros(num_states, dtype=np.int64))

    def restricted_max(self, q: np.ndarray) -> np.ndarray:
        masked = np.where(self.mask, q, -np.inf).max(axis=1)
        empty = ~self.mask.any(axis=1)
        masked[empty] = q[empty, self.fallback_action[empty]]
        return masked

    def greedy(self, q: np.ndarray) -> np.ndarray:
        acts = np.argmax(np.where(self.mask, q, -np.inf), axis=1)
        empty = ~self.mask.any(axis=1)
        acts[empty] = self.fallback_action[empty]
        return acts


def standard_backup(q: np.ndarray, model, rewards: np.ndarray | None = None) -> np.ndarray:
    """One synchronous sweep of r + gamma * sum_s' P(s'|s,a) max_a' Q(s',a')."""
    p, r, g = _model(model)
    r = r if rewards is None else rewards
    return r + g * (p @ q.max(axis=1))


def action_support_backup(q: np.ndarray, dyn: EmpiricalDynamics, pair_support: np.ndarray | None = None) -> np.ndarray:
    """Backup whose inner max only ranges over dataset-supported actions.

    Next states without any supported action contribute nothing beyond the reward.
    """
    p, r, g = _model(dyn)
    support = dyn.seen if pair_support is None else pair_support
    v = np.where(support, q, -np.inf).max(axis=1)
    v[~support.any(axis=1)] = 0.0
    return r + g * (p @ v)


def outcome_driven_backup(q: np.ndarray, dyn: EmpiricalDynamics, admissible: AdmissibleActionSets) -> np.ndarray:
    """Backup whose inner max ranges over actions with in-support outcomes."""
    p, r, g = _model(dyn)
    return r + g * (p @ admissible.restricted_max(q))


def solve_fixed_point(backup: Backup, q0: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[np.ndarray, list[float]]:
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.array(q0, dtype=float)
    trace: list[float] = []
    for _ in range(max_iter):
        nxt = backup(q)
        delta = float(np.abs(nxt - q).max())
        trace.append(delta)
        q = nxt
        if delta < tol:
            return q, trace
    raise ConvergenceError(f"no convergence within {max_iter} sweeps (last delta {trace[-1]:.3e})", trace)


def oracle_value_iteration(mdp: TabularMdp, tol: float = 1e-12) -> np.ndarray:
    """Optimal Q* of the true MDP by state-value iteration.

    Deliberately shares no code with the backups above so it can referee them.
    """
    n_s, n_a = mdp.num_states, mdp.num_actions
    v = np.zeros(n_s)
    stop = tol * (1.0 - mdp.discount) / max(mdp.discount, 1e-300)
    while True:
        v_new = np.empty(n_s)
        for s in range(n_s):
            best = -math.inf
            for a in range(n_a):
                val = mdp.reward[s, a] + mdp.discount * float(np.dot(mdp.transition[s, a], v))
                best = max(best, val)
            v_new[s] = best
        done = np.abs(v_new - v).max() <= stop
        v = v_new
        if done:
            break
    return np.array([[mdp.reward[s, a] + mdp.discount * float(np.dot(mdp.transition[s, a], v)) for a in range(n_a)]
                     for s in range(n_s)])


def exact_fixed_point(model, allowed: AdmissibleActionSets | None = None, tol: float = 1e-12) -> np.ndarray:
    """Fixed point of the (optionally restricted) optimality backup, polished by a linear solve."""
    p, r, g = _model(model)
    n_s, n_a = r.shape
    allowed = allowed or AdmissibleActionSets.everything(n_s, n_a)

    def backup(q):
        return r + g * (p @ allowed.restricted_max(q))

    q, _ = solve_fixed_point(backup, np.zeros((n_s, n_a)), tol=max(tol, 1e-13), max_iter=200_000)
    for _ in range(50):
        acts = allowed.greedy(q)
        p_pi = p[np.arange(n_s), acts]
        r_pi = r[np.arange(n_s), acts]
        v = np.linalg.solve(np.eye(n_s) - g * p_pi, r_pi)
        q_new = r + g * (p @ v)
        if np.array_equal(allowed.greedy(q_new), acts):
            return q_new
        q = q_new
    return q


def greedy_path(mdp: TabularMdp, actions: np.ndarray, start: int | None = None, horizon: int = 1000) -> list[int]:
    """States visited by following ``actions`` on the most likely transitions from ``start``."""
    s = int(np.argmax(mdp.initial_dist)) if start is None else start
    path = [s]
    for _ in range(horizon):
        if mdp.terminal[s]:
            break
        s = int(np.argmax(mdp.transition[s, actions[s]]))
        path.append(s)
    return path


def reachable_under(mdp: TabularMdp, actions: np.ndarray) -> np.ndarray:
    """States reachable with positive probability from the initial distribution under ``actions``."""
    reach = mdp.initial_dist > 0
    frontier = list(np.flatnonzero(reach))
    while frontier:
        s = frontier.pop()
        for t in np.flatnonzero(mdp.transition[s, actions[s]] > 0):
            if not reach[t]:
                reach[t] = True
                frontier.append(t)
    return reach


def verify_contraction(
    backup: Backup,
    discount: float,
    shape: tuple[int, int],
    trials: int,
    seed: int,
    scale: float = 10.0,
    slack: float = 1e-9,
) -> dict:
    """Check ``||Bu - Bv|| <= gamma ||u - v|| + slack`` on random table pairs."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    max_ratio = 0.0
    counterexample = None
    for t in range(trials):
        u = rng.uniform(-scale, scale, size=shape)
        v = u.copy() if t == 0 else rng.uniform(-scale, scale, size=shape)
        dist = float(np.abs(u - v).max())
        out = float(np.abs(backup(u) - backup(v)).max())
        if dist > 0:
            max_ratio = max(max_ratio, out / dist)
        if out > discount * dist + slack and counterexample is None:
            counterexample = {"u": u.tolist(), "v": v.tolist(), "ratio": out / dist}
    return {
        "check": "contraction",
        "pass": counterexample is None,
        "max_ratio": max_ratio,
        "discount": discount,
        "trials": trials,
        **({"counterexample": counterexample} if counterexample else {}),
    }


def _log_slope(errors: np.ndarray) -> float:
    k = np.arange(len(errors), dtype=float)
    return float(np.polyfit(k, np.log(errors), 1)[0])


def verify_convergence_rate(dyn: EmpiricalDynamics, q0: np.ndarray, k_max: int = 200, floor: float = 1e-4) -> dict:
    """Iterate the outcome-driven backup from ``q0`` and check the gamma^k envelope.

    Errors and deltas below ``floor`` times the initial error are dropped from
    the ratio and slope checks, where rounding dominates.
    """
    admissible = AdmissibleActionSets.from_dynamics(dyn)
    g = dyn.discount
    q_star = exact_fixed_point(dyn, admissible)
    q = np.array(q0, dtype=float)
    errors, deltas = [float(np.abs(q - q_star).max())], []
    for _ in range(k_max):
        nxt = outcome_driven_backup(q, dyn, admissible)
        deltas.append(float(np.abs(nxt - q).max()))
        q = nxt
        errors.append(float(np.abs(q - q_star).max()))
    e = np.array(errors)
    d = np.array(deltas)
    e0 = e[0]
    envelope_ok = bool(np.all(e <= g ** np.arange(len(e)) * e0 * (1 + 1e-9) + 1e-12))
    usable_d = d > floor * max(d[0], 1e-300)
    ratios = d[1:][usable_d[1:] & usable_d[:-1]] / d[:-1][usable_d[1:] & usable_d[:-1]]
    max_ratio = float(ratios.max()) if len(ratios) else 0.0
    usable_e = e > floor * max(e0, 1e-300)
    slope = _log_slope(e[usable_e]) if usable_e.sum() >= 3 else -math.inf
    passed = envelope_ok and max_ratio <= g + 1e-9 and slope <= math.log(g) + 0.01
    return {
        "check": "convergence_rate",
        "pass": bool(passed),
        "slope": slope,
        "log_discount": math.log(g),
        "max_delta_ratio": max_ratio,
        "envelope_ok": envelope_ok,
        "initial_error": e0,
        "errors": e.tolist(),
    }


def statistical_gap_table(
    mdp: TabularMdp,
    sizes: tuple[int, ...] = (100, 1_000, 10_000),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    horizon: int = 10,
) -> dict:
    """||Q_hat* - Q*||_inf for uniform-behaviour datasets of growing size N."""
    from odaf.dataset import rollout
    from odaf.dynamics import fit_empirical

    q_star = oracle_value_iteration(mdp)
    uniform = np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
    table = []
    for n in sizes:
        gaps = []
        for seed in seeds:
            episodes = max(1, n // horizon)
            data = rollout(mdp, uniform, episodes, horizon, seed=seed * 7919 + n)
            dyn = fit_empirical(data, discount=mdp.discount)
            q_hat = exact_fixed_point(dyn, AdmissibleActionSets.from_dynamics(dyn))
            gaps.append(float(np.abs(q_hat - q_star).max()))
        table.append({"N": n, "gaps": gaps, "median": float(np.median(gaps))})
    medians = [row["median"] for row in table]
    monotone = all(b <= a for a, b in zip(medians, medians[1:]))
    return {
        "check": "statistical_gap",
        "pass": monotone,
        "gap_table": table,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
    }


def verify_coverage_agreement(mdp: TabularMdp, dyn: EmpiricalDynamics, require_agreement: bool = True) -> dict:
    """Compare greedy(outcome-driven fixed point) with greedy(Q*) along the optimal policy's reach."""
    q_star = oracle_value_iteration(mdp)
    opt_actions = np.argmax(q_star, axis=1)
    on_path = reachable_under(mdp, opt_actions) & ~mdp.terminal
    admissible = AdmissibleActionSets.from_dynamics(dyn)
    q_hat = exact_fixed_point(dyn, admissible)
    hat_actions = admissible.greedy(q_hat)
    states = np.flatnonzero(on_path)
    # several actions can be optimal; agreement means the chosen one is optimal under Q*
    best = q_star[states].max(axis=1)
    chosen = q_star[states, hat_actions[states]]
    mismatch = states[chosen < best - 1e-9]
    covered = bool(dyn.state_support[states].all())
    gap = float(np.abs(q_hat[states, opt_actions[states]] - q_star[states, opt_actions[states]]).max()) if len(states) else 0.0
    agree = len(mismatch) == 0
    return {
        "check": "coverage_agreement",
        "pass": bool(agree or not require_agreement),
        "agree": bool(agree),
        "optimal_states_covered": covered,
        "mismatched_states": mismatch.tolist(),
        "q_gap_on_path": gap,
    }


def random_mdps(count: int, seed: int, max_states: int = 20, max_actions: int = 5, discount: float = 0.9) -> list[TabularMdp]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n_s = int(rng.integers(2, max_states + 1))
        n_a = int(rng.integers(1, max_actions + 1))
        branching = int(rng.integers(1, min(n_s, 4) + 1))
        out.append(build_random_mdp(n_s, n_a, branching, 1.0, discount, seed=int(rng.integers(2**31))))
    return out
