"""Count-based dynamics model and dataset-support queries.

Rows for observed (s, a) pairs are maximum-likelihood frequencies, optionally
Laplace-smoothed over the next states seen anywhere in the dataset. Rows for
unobserved pairs come from one of two places:

* with a ``grid``, a pooled displacement model: the histogram of (d_row, d_col)
  moves observed for action ``a`` anywhere in the dataset, applied at ``s``
  (moves leaving the grid keep the agent in place). Only the grid's width and
  height are read, never its walls.
* otherwise the uniform fallback row, flagged in ``fallback``.

States observed as the target of a terminal transition are absorbing with
zero reward, matching the MDP convention.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from odaf.dataset import TransitionDataset
from odaf.mdp import GraphGeometry, GridMaze
from odaf.policy import SoftmaxPolicy


class SupportError(ValueError):
    """Raised when a query needs a state inside the dataset's state support."""


@dataclass(frozen=True, eq=False)
class EmpiricalDynamics:
    probs: np.ndarray  # [s, a, s'], every row a distribution
    rewards: np.ndarray  # [s, a]
    seen: np.ndarray  # pair support (N(s,a) >= min_count)
    fallback: np.ndarray  # rows that are the uniform placeholder
    generalized: np.ndarray  # rows predicted by the displacement model
    state_support: np.ndarray
    terminal: np.ndarray
    smoothing: float = 0.0
    discount: float = 0.99
    r_max: float = 1.0
    counts_s: np.ndarray = field(default=None, repr=False)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def row(self, state: int, action: int) -> np.ndarray:
        return self.probs[state, action]

    def to_json(self) -> dict:
        """Debug export of the stored rows (sparse)."""
        rows = []
        for s, a in zip(*np.nonzero(self.seen | self.generalized)):
            nz = np.flatnonzero(self.probs[s, a])
            rows.append({"s": int(s), "a": int(a), "next": nz.tolist(), "p": self.probs[s, a, nz].tolist(),
                         "generalized": bool(self.generalized[s, a])})
        return {"smoothing": self.smoothing, "rows": rows, "state_support": np.flatnonzero(self.state_support).tolist()}


def fit_empirical(
    dataset: TransitionDataset,
    smoothing: float = 0.0,
    grid: GridMaze | None = None,
    min_count: int = 1,
    discount: float = 0.99,
) -> EmpiricalDynamics:
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    n_s, n_a = dataset.num_states, dataset.num_actions
    counts = dataset.counts_sas.astype(float)
    n_sa = dataset.counts_sa
    seen = n_sa >= min_count
    support = dataset.state_support.copy()
    if min_count > 1:
        support = (dataset.counts_s >= min_count).copy()
        support[dataset.next_states[seen[dataset.states, dataset.actions]]] = True

    terminal = np.zeros(n_s, dtype=bool)
    terminal[dataset.next_states[dataset.dones]] = True

    probs = np.zeros((n_s, n_a, n_s))
    rewards = np.zeros((n_s, n_a))
    fallback = np.zeros((n_s, n_a), dtype=bool)
    generalized = np.zeros((n_s, n_a), dtype=bool)

    candidates = np.zeros(n_s, dtype=bool)
    candidates[dataset.next_states] = True
    if seen.any():
        c = counts[seen]
        if smoothing > 0:
            c = c + smoothing * candidates
        probs[seen] = c / c.sum(axis=1, keepdims=True)
        sums = np.zeros((n_s, n_a))
        np.add.at(sums, (dataset.states, dataset.actions), dataset.rewards)
        rewards[seen] = sums[seen] / np.maximum(n_sa[seen], 1)

    # reward model keyed by the landing state, for predicted rows
    global_mean = float(dataset.rewards.mean()) if len(dataset) else 0.0
    # unvisited landing states get the typical non-terminal step reward, so
    # goal bonuses never leak into predicted self-loops
    step_rewards = dataset.rewards[~dataset.dones]
    default_landing = float(step_rewards.mean()) if len(step_rewards) else global_mean
    landing_sum = np.bincount(dataset.next_states, weights=dataset.rewards, minlength=n_s)
    landing_n = np.bincount(dataset.next_states, minlength=n_s)
    landing_reward = np.where(landing_n > 0, landing_sum / np.maximum(landing_n, 1), default_landing)

    displacement = _displacement_model(dataset, grid) if grid is not None else {}
    for s in range(n_s):
        for a in range(n_a):
            if seen[s, a] and not terminal[s]:
                continue
            if terminal[s]:
                probs[s, a] = 0.0
                probs[s, a, s] = 1.0
                rewards[s, a] = 0.0
                continue
            moves = displacement.get(a)
            if moves:
                row = np.zeros(n_s)
                r0, c0 = grid.cell_of(s)
                for (dr, dc), w in moves.items():
                    cell = (r0 + dr, c0 + dc)
                    row[grid.state_of(cell) if grid.in_bounds(cell) else s] += w
                probs[s, a] = row
                rewards[s, a] = float(row @ landing_reward)
                generalized[s, a] = True
            else:
                probs[s, a] = 1.0 / n_s
                rewards[s, a] = global_mean
                fallback[s, a] = True

    r_max = float(np.abs(dataset.rewards).max()) if len(dataset) else 1.0
    for arr in (probs, rewards, seen, fallback, generalized, support, terminal):
        arr.setflags(write=False)
    return EmpiricalDynamics(
        probs=probs,
        rewards=rewards,
        seen=seen,
        fallback=fallback,
        generalized=generalized,
        state_support=support,
        terminal=terminal,
        smoothing=float(smoothing),
        discount=discount,
        r_max=max(r_max, 1e-12),
        counts_s=dataset.counts_s,
    )


def _displacement_model(dataset: TransitionDataset, grid: GridMaze) -> dict[int, dict[tuple[int, int], float]]:
    if dataset.num_states != grid.num_states:
        raise ValueError("grid size does not match the dataset's state count")
    hist: dict[int, dict[tuple[int, int], int]] = {}
    for s, a, sp in zip(dataset.states, dataset.actions, dataset.next_states):
        (r0, c0), (r1, c1) = grid.cell_of(s), grid.cell_of(sp)
        h = hist.setdefault(int(a), {})
        key = (r1 - r0, c1 - c0)
        h[key] = h.get(key, 0) + 1
    out = {}
    for a, h in hist.items():
        total = sum(h.values())
        out[a] = {k: v / total for k, v in sorted(h.items())}
    return out


def _policy_row(policy, state: int) -> np.ndarray:
    if isinstance(policy, SoftmaxPolicy):
        return policy.probs()[state]
    p = np.asarray(policy, dtype=float)
    return p[state] if p.ndim == 2 else p


def _check_support(dyn: EmpiricalDynamics, state: int) -> None:
    if not 0 <= state < dyn.num_states or not dyn.state_support[state]:
        raise SupportError(f"state {state} is outside the dataset's state support")


def transitioned_dist(dyn: EmpiricalDynamics, state: int, policy) -> tuple[np.ndarray, np.ndarray]:
    """P(s'|s, pi) = sum_a pi(a|s) P_hat(s'|s, a), plus a per-next-state mask of fallback contributions."""
    _check_support(dyn, state)
    pi = _policy_row(policy, state)
    dist = pi @ dyn.probs[state]
    fb = dyn.fallback[state]
    via_fallback = (pi[fb] @ dyn.probs[state, fb]) > 0 if fb.any() else np.zeros(dyn.num_states, dtype=bool)
    return dist, via_fallback


def ood_mass(dyn: EmpiricalDynamics, state: int, policy) -> float:
    """Transitioned probability mass landing outside the state support."""
    dist, _ = transitioned_dist(dyn, state, policy)
    return float(dist[~dyn.state_support].sum())


def action_ood_mass(dyn: EmpiricalDynamics) -> np.ndarray:
    """Out-of-support mass of every row, shape (S, A)."""
    return dyn.probs[:, :, ~dyn.state_support].sum(axis=2)


def perturb_neighborhood(geometry: GridMaze | GraphGeometry, state: int, radius: int) -> frozenset[int]:
    """Floor cells within Chebyshev distance ``radius`` (grids) or ``radius`` hops (graphs)."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if isinstance(geometry, GridMaze):
        r0, c0 = geometry.cell_of(state)
        out = {state}
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                cell = (r0 + dr, c0 + dc)
                if geometry.is_floor(cell):
                    out.add(geometry.state_of(cell))
        return frozenset(out)
    seen = {state}
    frontier = deque([(state, 0)])
    while frontier:
        s, d = frontier.popleft()
        if d == radius:
            continue
        for t in geometry.adjacency[s]:
            if t not in seen:
                seen.add(t)
                frontier.append((t, d + 1))
    return frozenset(seen)


def neighborhood_table(geometry: GridMaze | GraphGeometry | None, num_states: int, radius: int) -> np.ndarray:
    """Padded (S, max_size) index table; rows ascend by state index and pad with their first entry."""
    if geometry is None or radius == 0:
        return np.arange(num_states)[:, None]
    hoods = [sorted(perturb_neighborhood(geometry, s, radius)) for s in range(num_states)]
    width = max(len(h) for h in hoods)
    table = np.empty((num_states, width), dtype=np.int64)
    for s, h in enumerate(hoods):
        table[s] = h + [h[0]] * (width - len(h))
    return table


def uncertainty_bound_terms(
    transition: np.ndarray,
    state_support: np.ndarray,
    state: int,
    policy_probs: np.ndarray,
    u_table: np.ndarray,
) -> tuple[float, float, float]:
    """(expected successor uncertainty, U_min, out-of-support mass) for one state.

    U_min is the smallest uncertainty over pairs at out-of-support states; the
    bound ``lhs >= U_min * ood`` holds whenever ``u_table`` is non-negative.
    """
    dist = policy_probs[state] @ transition[state]
    u_state = (policy_probs * u_table).sum(axis=1)
    lhs = float(dist @ u_state)
    outside = ~np.asarray(state_support, dtype=bool)
    ood = float(dist[outside].sum())
    u_min = float(u_table[outside].min()) if outside.any() else 0.0
    return lhs, u_min, ood
