import json

import numpy as np
import pytest

from odaf.mdp import (
    DETOUR_ACTIONS,
    FRAGMENT_ACTIONS,
    STITCH_MID,
    GridMaze,
    GraphGeometry,
    TabularMdp,
    build_random_mdp,
    compile_maze,
    open_maze,
    step,
    stitching_maze,
)
from odaf.operators import oracle_value_iteration
from oracles import bfs_distance, path_return, value_iteration


def test_random_mdp_rows_normalized():
    m = build_random_mdp(5, 2, 2, 1.0, 0.9, seed=7)
    np.testing.assert_allclose(m.transition.sum(axis=2), 1.0, atol=1e-12)
    assert ((m.transition > 0).sum(axis=2) == 2).all()


def test_degenerate_random_mdp():
    m = build_random_mdp(1, 1, 1, 0.0, 0.5, seed=0)
    assert m.transition[0, 0, 0] == 1.0
    assert m.reward[0, 0] == 0.0
    assert oracle_value_iteration(m)[0, 0] == 0.0


def test_random_mdp_golden_value(golden_dir):
    golden = json.loads((golden_dir / "random_mdp_20x5_seed3.json").read_text())
    m = build_random_mdp(*golden["args"][:5], seed=golden["args"][5])
    assert m.fingerprint() == golden["fingerprint"]
    q = oracle_value_iteration(m)
    np.testing.assert_allclose(q.max(axis=1), golden["v_star"], atol=1e-9)
    np.testing.assert_allclose(q, golden["q_star"], atol=1e-9)


def test_random_mdp_is_seeded():
    a = build_random_mdp(6, 3, 2, 1.0, 0.9, seed=11)
    b = build_random_mdp(6, 3, 2, 1.0, 0.9, seed=11)
    assert a.fingerprint() == b.fingerprint()
    assert build_random_mdp(6, 3, 2, 1.0, 0.9, seed=12).fingerprint() != a.fingerprint()


@pytest.mark.parametrize(
    "args",
    [(0, 2, 1, 1.0, 0.9), (3, 0, 1, 1.0, 0.9), (3, 2, 4, 1.0, 0.9), (3, 2, 1, 1.0, 1.0), (3, 2, 1, 1.0, 0.0)],
)
def test_random_mdp_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_random_mdp(*args, seed=0)


def test_tabular_mdp_validates():
    t = np.array([[[0.5, 0.6]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        TabularMdp(t, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]), np.zeros(2, bool), 1.0)


def test_stitching_maze_layout():
    maze = stitching_maze()
    mdp = compile_maze(maze)
    assert (maze.width, maze.height) == (7, 7)
    assert mdp.num_states == 49
    assert maze.start != maze.goal
    assert maze.is_floor(maze.start) and maze.is_floor(maze.goal)
    assert ((mdp.transition == 0) | (mdp.transition == 1)).all()


def test_stitching_returns_ordering():
    maze = stitching_maze()
    mdp = compile_maze(maze)
    rows = maze.to_text().splitlines()
    shortest = bfs_distance(rows, maze.start, maze.goal)
    assert shortest == 4
    optimal = path_return(maze.step_reward, maze.goal_reward, shortest)
    detour = path_return(maze.step_reward, maze.goal_reward, len(DETOUR_ACTIONS))
    fragment = len(FRAGMENT_ACTIONS) * maze.step_reward
    assert (optimal, detour, fragment) == (47.0, 31.0, -3.0)
    assert optimal > detour > fragment
    # the detour genuinely ends at G and the fragment at M
    assert maze.path_cells(maze.start, DETOUR_ACTIONS)[-1] == maze.goal
    assert maze.path_cells(maze.start, FRAGMENT_ACTIONS)[-1] == STITCH_MID
    v, _ = value_iteration(mdp.transition.tolist(), mdp.reward.tolist(), mdp.discount, mdp.terminal.tolist())
    s0 = maze.state_of(maze.start)
    discounted_opt = sum(-mdp.discount**k for k in range(3)) + mdp.discount**3 * 50
    assert v[s0] == pytest.approx(discounted_opt, abs=1e-9)


def test_compile_is_pure_and_stable():
    a = compile_maze(stitching_maze())
    b = compile_maze(stitching_maze())
    assert a.fingerprint() == b.fingerprint()
    assert np.array_equal(a.transition, b.transition)


def test_corridor_move_right():
    maze = GridMaze.from_text("SG", goal_reward=1.0)
    mdp = compile_maze(maze)
    assert mdp.transition[0, 3, 1] == 1.0


def test_slip_mass_goes_to_lateral_moves():
    maze = GridMaze.from_text("...\n.S.\n..G", slip_prob=0.2)
    mdp = compile_maze(maze)
    s = maze.state_of((1, 1))
    row = mdp.transition[s, 0]  # up
    assert row[maze.state_of((0, 1))] == pytest.approx(0.8)
    assert row[maze.state_of((1, 0))] == pytest.approx(0.1)
    assert row[maze.state_of((1, 2))] == pytest.approx(0.1)


def test_walls_are_absorbing_and_blocked_moves_stay():
    maze = GridMaze.from_text("S#G\n...")
    mdp = compile_maze(maze)
    wall = maze.state_of((0, 1))
    assert mdp.terminal[wall]
    assert mdp.initial_dist[wall] == 0
    assert mdp.transition[0, 3, 0] == 1.0  # right into the wall


def test_goal_is_terminal_self_loop():
    maze = stitching_maze()
    mdp = compile_maze(maze)
    g = maze.state_of(maze.goal)
    assert mdp.terminal[g]
    assert (mdp.transition[g, :, g] == 1).all()
    assert (mdp.reward[g] == 0).all()


def test_maze_text_round_trip(tmp_path):
    maze = open_maze()
    path = tmp_path / "m.txt"
    path.write_text(maze.to_text())
    again = GridMaze.load(path)
    assert again.walls == maze.walls and again.start == maze.start and again.goal == maze.goal


@pytest.mark.parametrize("text", ["S..", "SG\nG.", "S#\n#G\n."])
def test_maze_parse_errors(text):
    with pytest.raises(ValueError):
        GridMaze.from_text(text)


def test_open_maze_fully_connected():
    maze = open_maze()
    rows = maze.to_text().splitlines()
    for s in maze.floor_states():
        assert bfs_distance(rows, maze.start, maze.cell_of(s)) is not None


def test_step_terminal_and_bounds():
    maze = stitching_maze()
    mdp = compile_maze(maze)
    g = maze.state_of(maze.goal)
    rng = np.random.default_rng(0)
    assert step(mdp, g, 2, rng) == (g, 0.0, True)
    with pytest.raises(ValueError):
        step(mdp, 99, 0, rng)
    with pytest.raises(ValueError):
        step(mdp, 0, 4, rng)


def test_step_sampling_frequencies():
    t = np.zeros((2, 1, 2))
    t[0, 0] = [0.3, 0.7]
    t[1, 0] = [0.0, 1.0]
    mdp = TabularMdp(t, np.zeros((2, 1)), 0.9, np.array([1.0, 0.0]), np.zeros(2, bool), 1.0)
    rng = np.random.default_rng(123)
    hits = sum(step(mdp, 0, 0, rng)[0] == 1 for _ in range(1000))
    # binomial(1000, 0.7) has std 14.5; 0.05 is more than 3 std
    assert abs(hits / 1000 - 0.7) <= 0.05


def test_graph_geometry_symmetric():
    m = build_random_mdp(6, 2, 2, 1.0, 0.9, seed=1)
    g = GraphGeometry.from_mdp(m)
    for s, nbrs in enumerate(g.adjacency):
        for t in nbrs:
            assert s in g.adjacency[t]
