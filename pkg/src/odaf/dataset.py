"""Offline transition datasets: collection, mixing, indexing and JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from odaf.mdp import (
    DETOUR_ACTIONS,
    FRAGMENT_ACTIONS,
    STITCHING_LAYOUT,
    GridMaze,
    TabularMdp,
    compile_maze,
)
from odaf.policy import SoftmaxPolicy

FORMAT_NAME = "odaf-transitions"
FORMAT_VERSION = 1


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    done: bool


class DatasetParseError(ValueError):
    def __init__(self, path: str, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno
        self.reason = reason


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Immutable transition list plus count indexes built once at construction.

    ``episode`` holds an episode id per transition; ids are contiguous and
    non-decreasing in list order.
    """

    num_states: int
    num_actions: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    episode: np.ndarray
    source_mdp_id: str = ""
    counts_sa: np.ndarray = field(init=False, repr=False)
    counts_sas: np.ndarray = field(init=False, repr=False)
    counts_s: np.ndarray = field(init=False, repr=False)
    state_support: np.ndarray = field(init=False, repr=False)
    pair_support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        cols = {
            "states": np.asarray(self.states, dtype=np.int64),
            "actions": np.asarray(self.actions, dtype=np.int64),
            "rewards": np.asarray(self.rewards, dtype=float),
            "next_states": np.asarray(self.next_states, dtype=np.int64),
            "dones": np.asarray(self.dones, dtype=bool),
            "episode": np.asarray(self.episode, dtype=np.int64),
        }
        n = len(cols["states"])
        if any(len(v) != n for v in cols.values()):
            raise ValueError("transition columns have different lengths")
        if n:
            for key in ("states", "next_states"):
                if cols[key].min() < 0 or cols[key].max() >= self.num_states:
                    raise ValueError(f"{key} index out of range [0, {self.num_states})")
            if cols["actions"].min() < 0 or cols["actions"].max() >= self.num_actions:
                raise ValueError(f"action index out of range [0, {self.num_actions})")
        for key, arr in cols.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        counts = _count_tables(self.num_states, self.num_actions, cols["states"], cols["actions"], cols["next_states"])
        for key, arr in zip(("counts_s", "counts_sa", "counts_sas"), counts):
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        support = self.counts_s > 0
        support[cols["next_states"]] = True
        support.setflags(write=False)
        object.__setattr__(self, "state_support", support)
        pairs = self.counts_sa > 0
        pairs.setflags(write=False)
        object.__setattr__(self, "pair_support", pairs)

    @classmethod
    def from_transitions(
        cls,
        transitions: Sequence[Transition],
        num_states: int,
        num_actions: int,
        source_mdp_id: str = "",
        episode: Sequence[int] | None = None,
    ) -> "TransitionDataset":
        arr = list(zip(*transitions)) if transitions else [[], [], [], [], []]
        if episode is None:
            episode = infer_episodes(arr[0], arr[3], arr[4])
        return cls(num_states, num_actions, arr[0], arr[1], arr[2], arr[3], arr[4], episode, source_mdp_id)

    @classmethod
    def empty(cls, num_states: int, num_actions: int, source_mdp_id: str = "") -> "TransitionDataset":
        return cls.from_transitions([], num_states, num_actions, source_mdp_id)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(int(s), int(a), float(r), int(sp), bool(d))
            for s, a, r, sp, d in zip(self.states, self.actions, self.rewards, self.next_states, self.dones)
        ]

    def subset(self, index: np.ndarray) -> "TransitionDataset":
        index = np.asarray(index, dtype=np.int64)
        return TransitionDataset(
            self.num_states,
            self.num_actions,
            self.states[index],
            self.actions[index],
            self.rewards[index],
            self.next_states[index],
            self.dones[index],
            _renumber(self.episode[index]),
            self.source_mdp_id,
        )

    def behavior_policy(self) -> np.ndarray:
        """Empirical pi_beta(a|s) = N(s,a)/N(s); uniform where N(s) = 0."""
        probs = np.full((self.num_states, self.num_actions), 1.0 / self.num_actions)
        seen = self.counts_s > 0
        probs[seen] = self.counts_sa[seen] / self.counts_s[seen, None]
        return probs

    def next_state_dist(self, state: int) -> np.ndarray:
        """Empirical distribution of next states observed from ``state``."""
        if self.counts_s[state] == 0:
            raise ValueError(f"state {state} was never visited in the dataset")
        return self.counts_sas[state].sum(axis=0) / self.counts_s[state]

    def episode_returns(self) -> np.ndarray:
        if not len(self):
            return np.zeros(0)
        return np.bincount(self.episode, weights=self.rewards)

    def num_episodes(self) -> int:
        return int(self.episode.max()) + 1 if len(self) else 0

    def stats(self) -> dict:
        returns = self.episode_returns()
        return {
            "transitions": len(self),
            "episodes": self.num_episodes(),
            "states_in_support": int(self.state_support.sum()),
            "pairs_in_support": int(self.pair_support.sum()),
            "return_mean": float(returns.mean()) if len(returns) else 0.0,
            "return_max": float(returns.max()) if len(returns) else 0.0,
            "return_min": float(returns.min()) if len(returns) else 0.0,
        }

    def recount(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _count_tables(self.num_states, self.num_actions, self.states, self.actions, self.next_states)


def _count_tables(num_states, num_actions, s, a, sp):
    counts_sas = np.zeros((num_states, num_actions, num_states), dtype=np.int64)
    np.add.at(counts_sas, (s, a, sp), 1)
    counts_sa = counts_sas.sum(axis=2)
    counts_s = counts_sa.sum(axis=1)
    return counts_s, counts_sa, counts_sas


def _renumber(ep: np.ndarray) -> np.ndarray:
    if not len(ep):
        return ep.copy()
    starts = np.concatenate([[True], ep[1:] != ep[:-1]])
    return np.cumsum(starts) - 1


def infer_episodes(states, next_states, dones) -> np.ndarray:
    """Episode ids for a flat transition list.

    A new episode starts after a terminal transition or wherever a transition
    does not continue from the previous next state.
    """
    n = len(states)
    ep = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        new = bool(dones[i - 1]) or int(states[i]) != int(next_states[i - 1])
        ep[i] = ep[i - 1] + new
    return ep


def _act(policy, state: int, t: int, rng: np.random.Generator) -> int | None:
    if isinstance(policy, SoftmaxPolicy):
        probs = policy.probs()[state]
        return int(rng.choice(len(probs), p=probs))
    if isinstance(policy, np.ndarray) and policy.ndim == 2:
        return int(rng.choice(policy.shape[1], p=policy[state]))
    return int(policy[t]) if t < len(policy) else None


def rollout(
    mdp: TabularMdp,
    policy: SoftmaxPolicy | np.ndarray | Sequence[int],
    episodes: int,
    horizon: int,
    seed: int,
) -> TransitionDataset:
    """Collect episodes by running ``policy`` from the initial distribution.

    ``policy`` may be a :class:`SoftmaxPolicy`, an (S, A) probability table,
    or a fixed action sequence; a sequence ends its episode when exhausted.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    if isinstance(policy, SoftmaxPolicy):
        policy = policy.probs()
    rows: list[Transition] = []
    ep_ids: list[int] = []
    for ep in range(episodes):
        s = int(rng.choice(mdp.num_states, p=mdp.initial_dist))
        for t in range(horizon):
            if mdp.terminal[s]:
                break
            a = _act(policy, s, t, rng)
            if a is None:
                break
            row = mdp.transition[s, a]
            sp = int(rng.choice(mdp.num_states, p=row))
            done = bool(mdp.terminal[sp])
            rows.append(Transition(s, a, float(mdp.reward[s, a]), sp, done))
            ep_ids.append(ep)
            s = sp
    return TransitionDataset.from_transitions(
        rows, mdp.num_states, mdp.num_actions, mdp.fingerprint(), episode=_renumber(np.asarray(ep_ids, dtype=np.int64))
    )


def is_stitching_maze(maze: GridMaze) -> bool:
    return maze.to_text() == STITCHING_LAYOUT and maze.slip_prob == 0.0


def make_stitching_dataset(maze: GridMaze, episodes_per_family: int, seed: int) -> TransitionDataset:
    """Equal numbers of detour episodes (S-A-B-G) and fragment episodes (S-M)."""
    if not is_stitching_maze(maze):
        raise ValueError("make_stitching_dataset requires the deterministic stitching maze")
    if episodes_per_family < 0:
        raise ValueError("episodes_per_family must be non-negative")
    mdp = compile_maze(maze)
    rng = np.random.default_rng(seed)
    families = [DETOUR_ACTIONS] * episodes_per_family + [FRAGMENT_ACTIONS] * episodes_per_family
    order = rng.permutation(len(families))
    parts = [rollout(mdp, families[i], 1, maze.horizon, seed=0) for i in order]
    return concatenate(parts, mdp.num_states, mdp.num_actions, mdp.fingerprint())


def concatenate(parts: Sequence[TransitionDataset], num_states: int, num_actions: int, source: str) -> TransitionDataset:
    cols = [[], [], [], [], []]
    episodes = []
    offset = 0
    for d in parts:
        if d.num_states != num_states or d.num_actions != num_actions:
            raise ValueError("datasets have different state/action spaces")
        for c, arr in zip(cols, (d.states, d.actions, d.rewards, d.next_states, d.dones)):
            c.append(arr)
        episodes.append(d.episode + offset)
        offset += d.num_episodes()
    if not parts:
        return TransitionDataset.empty(num_states, num_actions, source)
    return TransitionDataset(
        num_states, num_actions, *(np.concatenate(c) for c in cols), _renumber(np.concatenate(episodes)), source
    )


def mix_datasets(
    expert: TransitionDataset,
    random: TransitionDataset,
    random_ratio: float,
    seed: int,
    level: str = "transition",
) -> TransitionDataset:
    """Mixture of ``min(len(expert), len(random))`` transitions, a ``random_ratio`` share from ``random``.

    ``level="trajectory"`` draws whole episodes instead, stopping once each
    share is reached, so the ratio then holds only up to one episode length.
    """
    if expert.source_mdp_id != random.source_mdp_id or expert.num_states != random.num_states:
        raise ValueError("cannot mix datasets collected on different MDPs")
    if not 0.0 <= random_ratio <= 1.0:
        raise ValueError("random_ratio must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    total = min(len(expert), len(random))
    n_random = int(round(random_ratio * total))
    n_expert = total - n_random
    if level == "transition":
        pick_r = rng.choice(len(random), size=n_random, replace=False)
        pick_e = rng.choice(len(expert), size=n_expert, replace=False)
        merged = concatenate(
            [expert.subset(np.sort(pick_e)), random.subset(np.sort(pick_r))],
            expert.num_states,
            expert.num_actions,
            expert.source_mdp_id,
        )
        perm = rng.permutation(len(merged))
        single = TransitionDataset(
            merged.num_states,
            merged.num_actions,
            merged.states[perm],
            merged.actions[perm],
            merged.rewards[perm],
            merged.next_states[perm],
            merged.dones[perm],
            np.arange(len(merged)),
            merged.source_mdp_id,
        )
        return single
    if level == "trajectory":
        parts = [_take_episodes(expert, n_expert, rng), _take_episodes(random, n_random, rng)]
        return concatenate(parts, expert.num_states, expert.num_actions, expert.source_mdp_id)
    raise ValueError(f"unknown mixing level {level!r}")


def _take_episodes(d: TransitionDataset, budget: int, rng: np.random.Generator) -> TransitionDataset:
    if budget <= 0 or not len(d):
        return d.subset(np.zeros(0, dtype=np.int64))
    chosen, used = [], 0
    for ep in rng.permutation(d.num_episodes()):
        if used >= budget:
            break
        idx = np.flatnonzero(d.episode == ep)
        chosen.append(idx)
        used += len(idx)
    return d.subset(np.concatenate(chosen))


def save(dataset: TransitionDataset, path: str | Path) -> None:
    """Write a header line followed by one ``{s, a, r, sp, done}`` object per transition."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "num_states": dataset.num_states,
        "num_actions": dataset.num_actions,
        "source": dataset.source_mdp_id,
        "n": len(dataset),
    }
    lines = [json.dumps({"header": header}, sort_keys=True)]
    for s, a, r, sp, d in zip(dataset.states, dataset.actions, dataset.rewards, dataset.next_states, dataset.dones):
        lines.append(f'{{"s": {int(s)}, "a": {int(a)}, "r": {float(r):.17g}, "sp": {int(sp)}, "done": {"true" if d else "false"}}}')
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load(path: str | Path, num_states: int | None = None, num_actions: int | None = None) -> TransitionDataset:
    """Read a dataset written by :func:`save`; counts are rebuilt and checked against the header."""
    path = str(path)
    header = None
    rows: list[Transition] = []
    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetParseError(path, lineno, "expected a JSON object")
            if "header" in obj:
                if header is not None or rows:
                    raise DatasetParseError(path, lineno, "header must be the first line")
                header = obj["header"]
                if header.get("format") != FORMAT_NAME:
                    raise DatasetParseError(path, lineno, f"unknown format {header.get('format')!r}")
                continue
            try:
                t = Transition(int(obj["s"]), int(obj["a"]), float(obj["r"]), int(obj["sp"]), bool(obj["done"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(path, lineno, f"bad transition record ({exc})") from None
            if type(obj["done"]) is not bool:
                raise DatasetParseError(path, lineno, "'done' must be a boolean")
            rows.append(t)
        last = lineno if rows or header else 0
    if header is not None:
        num_states = num_states or int(header["num_states"])
        num_actions = num_actions or int(header["num_actions"])
        if int(header["n"]) != len(rows):
            raise DatasetParseError(path, last, f"header declares {header['n']} transitions, found {len(rows)}")
        source = str(header.get("source", ""))
    else:
        source = ""
        if num_states is None:
            num_states = 1 + max((max(t.state, t.next_state) for t in rows), default=0)
        if num_actions is None:
            num_actions = 1 + max((t.action for t in rows), default=0)
    try:
        ds = TransitionDataset.from_transitions(rows, num_states, num_actions, source)
    except ValueError as exc:
        raise DatasetParseError(path, last, str(exc)) from None
    recount = ds.recount()
    for got, want in zip(recount, (ds.counts_s, ds.counts_sa, ds.counts_sas)):
        if not np.array_equal(got, want):
            raise DatasetParseError(path, last, "count tables disagree with the transition list")
    return ds
