"""Finite MDPs, grid mazes and environment stepping.

States of a compiled maze are numbered row-major (``row * width + col``).
Walls are kept as states so the numbering is stable, but they are absorbing
and unreachable from any floor cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

Cell = tuple[int, int]

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
MOVES: tuple[Cell, ...] = ((-1, 0), (1, 0), (0, -1), (0, 1))
_LATERAL = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}

_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP with dense transition and reward tables."""

    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a]
    discount: float
    initial_dist: np.ndarray
    terminal: np.ndarray
    r_max: float
    name: str = "mdp"

    def __post_init__(self) -> None:
        p = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        rho = np.asarray(self.initial_dist, dtype=float)
        term = np.asarray(self.terminal, dtype=bool)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        n_s, n_a, _ = p.shape
        if n_s < 1 or n_a < 1:
            raise ValueError("need at least one state and one action")
        if r.shape != (n_s, n_a):
            raise ValueError(f"reward must have shape {(n_s, n_a)}, got {r.shape}")
        if rho.shape != (n_s,) or term.shape != (n_s,):
            raise ValueError("initial_dist and terminal must have one entry per state")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if (p < 0).any() or np.abs(p.sum(axis=2) - 1.0).max() > _ROW_TOL:
            raise ValueError("transition rows must be probability vectors")
        if (rho < 0).any() or abs(rho.sum() - 1.0) > _ROW_TOL:
            raise ValueError("initial_dist must be a probability vector")
        if np.abs(r).max(initial=0.0) > self.r_max + 1e-12:
            raise ValueError("reward exceeds declared r_max")
        for s in np.flatnonzero(term):
            if not np.all(p[s, :, s] == 1.0) or np.any(r[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        for name, arr in (("transition", p), ("reward", r), ("initial_dist", rho), ("terminal", term)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def fingerprint(self) -> str:
        """Short content hash; identifies the source MDP of a dataset."""
        import hashlib

        h = hashlib.sha256()
        for arr in (self.transition, self.reward, self.initial_dist, self.terminal):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr(float(self.discount)).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class GridMaze:
    width: int
    height: int
    walls: frozenset[Cell]
    start: Cell
    goal: Cell
    slip_prob: float = 0.0
    step_reward: float = -1.0
    goal_reward: float = 50.0
    horizon: int = 60
    discount: float = 0.99
    name: str = "maze"

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("maze dimensions must be positive")
        object.__setattr__(self, "walls", frozenset(self.walls))
        for label, cell in (("start", self.start), ("goal", self.goal)):
            if not self.in_bounds(cell):
                raise ValueError(f"{label} {cell} lies outside the grid")
            if cell in self.walls:
                raise ValueError(f"{label} {cell} is a wall")
        if self.start == self.goal:
            raise ValueError("start and goal must differ")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_floor(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    def state_of(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell_of(self, state: int) -> Cell:
        return divmod(int(state), self.width)

    def floor_states(self) -> list[int]:
        return [s for s in range(self.num_states) if self.cell_of(s) not in self.walls]

    def move(self, cell: Cell, action: int) -> Cell:
        """Deterministic effect of ``action``; blocked moves stay put."""
        dr, dc = MOVES[action]
        target = (cell[0] + dr, cell[1] + dc)
        return target if self.is_floor(target) else cell

    def path_cells(self, start: Cell, actions: Iterable[int]) -> list[Cell]:
        cells = [start]
        for a in actions:
            cells.append(self.move(cells[-1], a))
        return cells

    def to_text(self) -> str:
        rows = []
        for r in range(self.height):
            row = []
            for c in range(self.width):
                cell = (r, c)
                row.append("S" if cell == self.start else "G" if cell == self.goal else "#" if cell in self.walls else ".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str, **kwargs) -> "GridMaze":
        """Parse a grid drawn with ``#`` walls, ``.`` floor, ``S`` start, ``G`` goal."""
        lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty maze text")
        width = len(lines[0])
        walls, start, goal = set(), None, None
        for r, line in enumerate(lines):
            if len(line) != width:
                raise ValueError(f"maze line {r + 1} has length {len(line)}, expected {width}")
            for c, ch in enumerate(line):
                if ch == "#":
                    walls.add((r, c))
                elif ch == "S":
                    if start is not None:
                        raise ValueError(f"second start cell on line {r + 1}")
                    start = (r, c)
                elif ch == "G":
                    if goal is not None:
                        raise ValueError(f"second goal cell on line {r + 1}")
                    goal = (r, c)
                elif ch != ".":
                    raise ValueError(f"unknown maze character {ch!r} on line {r + 1}")
        if start is None or goal is None:
            raise ValueError("maze needs exactly one S and one G")
        return cls(width=width, height=len(lines), walls=frozenset(walls), start=start, goal=goal, **kwargs)

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> "GridMaze":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **kwargs)


# Ring maze: the detour climbs the left column, crosses the top row and comes
# back along the bottom row from the right; the stitching fragment runs from S
# along the bottom row and stops at M, one cell left of G.
STITCHING_LAYOUT = """\
.......
.#####.
.#####.
.#####.
.#####.
.#####.
S...G..
"""
STITCH_MID: Cell = (6, 3)
STITCH_A: Cell = (0, 0)
STITCH_B: Cell = (0, 6)

# Detour S -> A -> B -> (6, 6) -> G and fragment S -> M as action sequences.
DETOUR_ACTIONS: tuple[int, ...] = (UP,) * 6 + (RIGHT,) * 6 + (DOWN,) * 6 + (LEFT,) * 2
FRAGMENT_ACTIONS: tuple[int, ...] = (RIGHT,) * 3


def stitching_maze() -> GridMaze:
    return GridMaze.from_text(
        STITCHING_LAYOUT,
        slip_prob=0.0,
        step_reward=-1.0,
        goal_reward=50.0,
        horizon=60,
        discount=0.99,
        name="stitching",
    )


OPEN_MAZE_LAYOUT = """\
S...#.....
.##.#.###.
.#......#.
.#.####.#.
...#..#...
##.#.##.##
......#...
.####.#.#.
....#...#.
###...#..G
"""


def open_maze(**overrides) -> GridMaze:
    """The fixed 10x10 maze used by the mixture, ablation and coverage checks."""
    params = dict(slip_prob=0.0, step_reward=-1.0, goal_reward=10.0, horizon=100, discount=0.99, name="open10")
    params.update(overrides)
    return GridMaze.from_text(OPEN_MAZE_LAYOUT, **params)


def compile_maze(maze: GridMaze) -> TabularMdp:
    n = maze.num_states
    p = np.zeros((n, 4, n))
    r = np.zeros((n, 4))
    terminal = np.zeros(n, dtype=bool)
    goal = maze.state_of(maze.goal)
    for s in range(n):
        cell = maze.cell_of(s)
        if cell in maze.walls or s == goal:
            terminal[s] = True
            p[s, :, s] = 1.0
            continue
        for a in range(4):
            outcomes = [(a, 1.0 - maze.slip_prob)]
            if maze.slip_prob > 0:
                outcomes += [(lat, maze.slip_prob / 2) for lat in _LATERAL[a]]
            for move, prob in outcomes:
                p[s, a, maze.state_of(maze.move(cell, move))] += prob
            entering_goal = p[s, a, goal]
            r[s, a] = entering_goal * maze.goal_reward + (1.0 - entering_goal) * maze.step_reward
    rho = np.zeros(n)
    rho[maze.state_of(maze.start)] = 1.0
    r_max = max(abs(maze.step_reward), abs(maze.goal_reward))
    return TabularMdp(p, r, maze.discount, rho, terminal, r_max, name=maze.name)


def build_random_mdp(
    num_states: int,
    num_actions: int,
    branching: int,
    r_max: float,
    discount: float,
    seed: int,
) -> TabularMdp:
    """Random MDP where every (s, a) reaches exactly ``branching`` next states."""
    if num_states < 1 or num_actions < 1:
        raise ValueError("num_states and num_actions must be positive")
    if not 1 <= branching <= num_states:
        raise ValueError(f"branching must lie in [1, {num_states}], got {branching}")
    if r_max < 0:
        raise ValueError("r_max must be non-negative")
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    p = np.zeros((num_states, num_actions, num_states))
    for s in range(num_states):
        for a in range(num_actions):
            succ = rng.choice(num_states, size=branching, replace=False)
            w = rng.uniform(0.05, 1.0, size=branching)
            p[s, a, succ] = w / w.sum()
    reward = rng.uniform(-r_max, r_max, size=(num_states, num_actions))
    rho = np.full(num_states, 1.0 / num_states)
    return TabularMdp(
        p, reward, discount, rho, np.zeros(num_states, dtype=bool), float(r_max), name=f"random-{seed}"
    )


def step(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
    if not 0 <= state < mdp.num_states:
        raise ValueError(f"state {state} out of range [0, {mdp.num_states})")
    if not 0 <= action < mdp.num_actions:
        raise ValueError(f"action {action} out of range [0, {mdp.num_actions})")
    if mdp.terminal[state]:
        return state, 0.0, True
    row = mdp.transition[state, action]
    nxt = int(rng.choice(mdp.num_states, p=row)) if np.count_nonzero(row) > 1 else int(np.argmax(row))
    return nxt, float(mdp.reward[state, action]), bool(mdp.terminal[nxt])


@dataclass(frozen=True)
class GraphGeometry:
    """State adjacency taken from the support of a transition tensor."""

    adjacency: tuple[frozenset[int], ...] = field(repr=False)

    @classmethod
    def from_mdp(cls, mdp: TabularMdp) -> "GraphGeometry":
        nz = mdp.transition.sum(axis=1) > 0
        nz = nz | nz.T
        return cls(tuple(frozenset(np.flatnonzero(nz[s]).tolist()) for s in range(mdp.num_states)))
