"""Independent reference computations used to derive frozen expected values.

Nothing here imports the package's solvers; everything is plain Python loops.
"""

from __future__ import annotations

import math


def value_iteration(transition, reward, discount, terminal, tol=1e-13, max_iter=100_000):
    """Gauss-free Jacobi value iteration over nested lists; returns (V, Q)."""
    n_s = len(transition)
    n_a = len(transition[0])
    v = [0.0] * n_s
    for _ in range(max_iter):
        q = [[0.0] * n_a for _ in range(n_s)]
        for s in range(n_s):
            for a in range(n_a):
                if terminal[s]:
                    continue
                total = float(reward[s][a])
                for t in range(n_s):
                    p = float(transition[s][a][t])
                    if p:
                        total += discount * p * v[t]
                q[s][a] = total
        new = [0.0 if terminal[s] else max(q[s]) for s in range(n_s)]
        delta = max(abs(x - y) for x, y in zip(new, v))
        v = new
        if delta < tol:
            return v, q
    raise RuntimeError("value iteration did not converge")


def path_return(step_reward, goal_reward, steps):
    """Return of a path of ``steps`` moves whose last move reaches the goal."""
    return (steps - 1) * step_reward + goal_reward


def population_std(xs):
    m = sum(xs) / len(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))


def reachable(transition, starts):
    seen = set(starts)
    stack = list(starts)
    while stack:
        s = stack.pop()
        for row in transition[s]:
            for t, p in enumerate(row):
                if p > 0 and t not in seen:
                    seen.add(t)
                    stack.append(t)
    return seen


def bfs_distance(maze_rows, start, goal):
    """Shortest number of moves between two cells of a text maze (walls '#')."""
    from collections import deque

    h, w = len(maze_rows), len(maze_rows[0])
    dist = {start: 0}
    dq = deque([start])
    while dq:
        r, c = dq.popleft()
        if (r, c) == goal:
            return dist[(r, c)]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and maze_rows[nr][nc] != "#" and (nr, nc) not in dist:
                dist[(nr, nc)] = dist[(r, c)] + 1
                dq.append((nr, nc))
    return None
