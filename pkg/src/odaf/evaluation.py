"""Greedy policy evaluation on the true MDP and exact return helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from odaf.mdp import FRAGMENT_ACTIONS, DETOUR_ACTIONS, GridMaze, TabularMdp
from odaf.policy import SoftmaxPolicy


@dataclass
class EvalReport:
    episodes: int
    horizon: int
    return_mean: float
    return_std: float
    per_episode_returns: list[float]
    seed: int
    stitched: bool | None = None
    trajectory: list[int] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "horizon": self.horizon,
            "return_mean": self.return_mean,
            "return_std": self.return_std,
            "per_episode_returns": self.per_episode_returns,
            "seed": self.seed,
            "stitched": self.stitched,
            "trajectory": self.trajectory,
            "actions": self.actions,
        }


def _greedy(policy) -> np.ndarray:
    if isinstance(policy, SoftmaxPolicy):
        return policy.greedy_actions()
    p = np.asarray(policy)
    return np.argmax(p, axis=1) if p.ndim == 2 else p.astype(np.int64)


def evaluate(
    policy: SoftmaxPolicy | np.ndarray,
    mdp: TabularMdp,
    episodes: int,
    horizon: int,
    seed: int,
    maze: GridMaze | None = None,
) -> EvalReport:
    """Run the greedy (argmax, lowest index on ties) policy for ``episodes`` episodes.

    With the stitching ``maze`` given, ``stitched`` records whether the first
    episode reaches the goal after passing through fragment-only cells.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    actions = _greedy(policy)
    rng = np.random.default_rng(seed)
    cum = np.cumsum(mdp.transition, axis=2)
    returns = []
    first_traj: list[int] = []
    first_actions: list[int] = []
    for ep in range(episodes):
        s = int(rng.choice(mdp.num_states, p=mdp.initial_dist))
        traj, acts, total = [s], [], 0.0
        for _ in range(horizon):
            if mdp.terminal[s]:
                break
            a = int(actions[s])
            total += float(mdp.reward[s, a])
            s = int(min(np.searchsorted(cum[s, a], rng.random(), side="right"), mdp.num_states - 1))
            traj.append(s)
            acts.append(a)
        returns.append(total)
        if ep == 0:
            first_traj, first_actions = traj, acts
    stitched = None
    if maze is not None and maze.name == "stitching":
        stitched = is_stitched(maze, first_traj)
    arr = np.array(returns)
    return EvalReport(
        episodes=episodes,
        horizon=horizon,
        return_mean=float(arr.mean()),
        return_std=float(arr.std()),
        per_episode_returns=[float(x) for x in arr],
        seed=seed,
        stitched=stitched,
        trajectory=first_traj,
        actions=first_actions,
    )


def family_cells(maze: GridMaze) -> tuple[set[int], set[int]]:
    """States on the detour family and on the fragment family of the stitching dataset."""
    detour = {maze.state_of(c) for c in maze.path_cells(maze.start, DETOUR_ACTIONS)}
    fragment = {maze.state_of(c) for c in maze.path_cells(maze.start, FRAGMENT_ACTIONS)}
    return detour, fragment


def is_stitched(maze: GridMaze, trajectory: list[int]) -> bool:
    detour, fragment = family_cells(maze)
    fragment_only = fragment - detour
    goal = maze.state_of(maze.goal)
    return bool(trajectory) and trajectory[-1] == goal and any(s in fragment_only for s in trajectory)


def expected_return(policy_probs: np.ndarray, mdp: TabularMdp, horizon: int) -> float:
    """Exact expected undiscounted return over ``horizon`` steps from the initial distribution."""
    probs = np.asarray(policy_probs, dtype=float)
    if probs.ndim == 1:
        onehot = np.zeros((mdp.num_states, mdp.num_actions))
        onehot[np.arange(mdp.num_states), probs.astype(np.int64)] = 1.0
        probs = onehot
    p_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    r_pi = (probs * mdp.reward).sum(axis=1)
    alive = ~mdp.terminal
    v = np.zeros(mdp.num_states)
    for _ in range(horizon):
        v = np.where(alive, r_pi + p_pi @ v, 0.0)
    return float(mdp.initial_dist @ v)


def normalized_score(value: float, random_return: float, optimal_return: float) -> float:
    span = optimal_return - random_return
    if span == 0:
        return 100.0
    return 100.0 * (value - random_return) / span
