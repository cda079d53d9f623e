import math

import numpy as np
import pytest

from odaf.dataset import Transition, TransitionDataset, make_stitching_dataset, rollout
from odaf.dynamics import fit_empirical
from odaf.evaluation import expected_return
from odaf.mdp import STITCH_MID, TabularMdp, build_random_mdp, compile_maze, stitching_maze
from odaf.operators import (
    AdmissibleActionSets,
    ConvergenceError,
    action_support_backup,
    exact_fixed_point,
    greedy_path,
    oracle_value_iteration,
    outcome_driven_backup,
    random_mdps,
    solve_fixed_point,
    standard_backup,
    statistical_gap_table,
    verify_contraction,
    verify_coverage_agreement,
    verify_convergence_rate,
)
from oracles import value_iteration


def one_state(r=1.0, g=0.5):
    return TabularMdp(np.ones((1, 1, 1)), np.full((1, 1), r), g, np.ones(1), np.zeros(1, bool), abs(r))


def test_single_state_fixed_point_is_geometric_sum():
    m = one_state()
    q, _ = solve_fixed_point(lambda q: standard_backup(q, m), np.zeros((1, 1)))
    assert q[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_tiny_discount_returns_rewards():
    m = build_random_mdp(6, 3, 2, 1.0, 1e-12, seed=0)
    q = np.random.default_rng(0).uniform(-5, 5, (6, 3))
    np.testing.assert_allclose(standard_backup(q, m), m.reward, atol=1e-10)


def test_standard_backup_converges_to_oracle():
    m = build_random_mdp(10, 3, 3, 1.0, 0.9, seed=4)
    q, _ = solve_fixed_point(lambda q: standard_backup(q, m), np.zeros((10, 3)), tol=1e-11)
    v, q_ref = value_iteration(m.transition.tolist(), m.reward.tolist(), m.discount, m.terminal.tolist())
    np.testing.assert_allclose(q, q_ref, atol=1e-8)
    np.testing.assert_allclose(q.max(axis=1), v, atol=1e-8)


def test_oracle_zero_reward():
    m = build_random_mdp(5, 2, 2, 0.0, 0.9, seed=1)
    assert (oracle_value_iteration(m) == 0).all()


def test_oracle_two_state_chain():
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = p[1, 0, 1] = 1.0
    m = TabularMdp(p, np.array([[0.0], [1.0]]), 0.5, np.array([1.0, 0.0]), np.zeros(2, bool), 1.0)
    q = oracle_value_iteration(m)
    assert q[1, 0] == pytest.approx(2.0, abs=1e-10)
    assert q[0, 0] == pytest.approx(1.0, abs=1e-10)


def full_dataset(m, episodes=300, horizon=10, seed=0):
    n_a = m.num_actions
    return rollout(m, np.full((m.num_states, n_a), 1 / n_a), episodes, horizon, seed=seed)


def test_full_coverage_backups_coincide():
    m = build_random_mdp(5, 2, 2, 1.0, 0.9, seed=2)
    dyn = fit_empirical(full_dataset(m), discount=0.9)
    assert dyn.seen.all()
    adm = AdmissibleActionSets.from_dynamics(dyn)
    assert adm.mask.all()
    q = np.random.default_rng(1).normal(size=(5, 2))
    ref = standard_backup(q, dyn)
    np.testing.assert_array_equal(action_support_backup(q, dyn), ref)
    np.testing.assert_array_equal(outcome_driven_backup(q, dyn, adm), ref)


def shortcut_problem():
    # 0 --a0--> 1 --a0--> 2 (goal) and a shortcut 0 --a1--> 2 that pays more
    p = np.zeros((3, 2, 3))
    p[0, 0, 1] = p[0, 1, 2] = 1.0
    p[1, :, 2] = 1.0
    p[2, :, 2] = 1.0
    r = np.array([[0.0, 1.0], [0.5, 0.5], [0.0, 0.0]])
    m = TabularMdp(p, r, 0.9, np.array([1.0, 0, 0]), np.array([False, False, True]), 1.0)
    d = TransitionDataset.from_transitions(
        [Transition(0, 0, 0.0, 1, False), Transition(1, 0, 0.5, 2, True)], 3, 2)
    return m, fit_empirical(d, discount=0.9)


def test_action_support_misses_omitted_shortcut():
    m, dyn = shortcut_problem()
    q, _ = solve_fixed_point(lambda q: action_support_backup(q, dyn), np.zeros((3, 2)))
    q_star = oracle_value_iteration(m)
    # enumerated: supported value at 0 is 0 + 0.9 * 0.5, the shortcut is worth 1
    assert q_star[0].max() == pytest.approx(1.0)
    v0 = q[0, dyn.seen[0]].max()
    assert v0 == pytest.approx(0.45, abs=1e-9)
    assert v0 < q_star[0].max()


def test_single_admissible_action_is_policy_evaluation():
    m = build_random_mdp(6, 3, 2, 1.0, 0.9, seed=8)
    dyn = fit_empirical(full_dataset(m, episodes=400), discount=0.9)
    acts = np.array([0, 2, 1, 1, 0, 2])
    adm = AdmissibleActionSets(np.eye(3, dtype=bool)[acts], acts)
    q = np.random.default_rng(3).normal(size=(6, 3))
    expected = dyn.rewards + 0.9 * dyn.probs @ q[np.arange(6), acts]
    np.testing.assert_allclose(outcome_driven_backup(q, dyn, adm), expected)


def test_empty_admissible_set_uses_fallback():
    adm = AdmissibleActionSets(np.zeros((2, 3), bool), np.array([2, 1]))
    q = np.arange(6.0).reshape(2, 3)
    assert adm.restricted_max(q).tolist() == [2.0, 4.0]
    assert adm.greedy(q).tolist() == [2, 1]


def stitching_setup(grid: bool):
    maze = stitching_maze()
    mdp = compile_maze(maze)
    dyn = fit_empirical(make_stitching_dataset(maze, 10, seed=0), discount=maze.discount, grid=maze if grid else None)
    return maze, mdp, dyn


def test_oracle_stitching_path_is_direct():
    maze, mdp, _ = stitching_setup(False)
    path = greedy_path(mdp, np.argmax(oracle_value_iteration(mdp), axis=1))
    assert [maze.cell_of(s) for s in path] == [(6, 0), (6, 1), (6, 2), (6, 3), (6, 4)]


def test_stitching_greedy_paths_separate():
    maze, mdp, dyn_seen = stitching_setup(False)
    q_as, _ = solve_fixed_point(lambda q: action_support_backup(q, dyn_seen), np.zeros(dyn_seen.rewards.shape))
    as_actions = np.argmax(np.where(dyn_seen.seen, q_as, -np.inf), axis=1)
    as_path = [maze.cell_of(s) for s in greedy_path(mdp, as_actions)]
    assert (0, 0) in as_path and (0, 6) in as_path and as_path[-1] == maze.goal

    _, _, dyn = stitching_setup(True)
    adm = AdmissibleActionSets.from_dynamics(dyn)
    mid = maze.state_of(STITCH_MID)
    assert not dyn.seen[mid, 3] and adm.mask[mid, 3]  # unseen but admissible
    od_actions = adm.greedy(exact_fixed_point(dyn, adm))
    od_path = [maze.cell_of(s) for s in greedy_path(mdp, od_actions)]
    assert od_path == [(6, 0), (6, 1), (6, 2), (6, 3), (6, 4)]

    h = maze.horizon
    assert expected_return(od_actions, mdp, h) > expected_return(as_actions, mdp, h)


def test_fixed_point_start_stops_at_once():
    m = build_random_mdp(5, 2, 2, 1.0, 0.9, seed=0)
    q = oracle_value_iteration(m)
    _, trace = solve_fixed_point(lambda x: standard_backup(x, m), q, tol=1e-8)
    assert len(trace) == 1 and trace[0] < 1e-8


def test_iteration_count_bound():
    m = build_random_mdp(20, 4, 3, 1.0, 0.9, seed=6)
    q0 = np.zeros((20, 4))
    eps0 = np.abs(oracle_value_iteration(m) - q0).max()
    tol = 1e-10
    _, trace = solve_fixed_point(lambda q: standard_backup(q, m), q0, tol=tol)
    assert len(trace) <= math.ceil(math.log(eps0 / tol) / math.log(1 / 0.9)) + 2


def test_delta_ratio_per_step():
    for m in random_mdps(5, seed=2):
        _, trace = solve_fixed_point(lambda q: standard_backup(q, m), np.zeros((m.num_states, m.num_actions)))
        d = np.array(trace)
        keep = d[:-1] > 1e-4 * d[0]  # below this, rounding noise dominates the ratio
        assert (d[1:][keep] / d[:-1][keep] <= 0.9 + 1e-9).all()


def test_convergence_error_carries_trace():
    m = build_random_mdp(5, 2, 2, 1.0, 0.99, seed=0)
    with pytest.raises(ConvergenceError) as info:
        solve_fixed_point(lambda q: standard_backup(q, m), np.zeros((5, 2)), tol=1e-12, max_iter=5)
    assert len(info.value.trace) == 5
    with pytest.raises(ValueError):
        solve_fixed_point(lambda q: q, np.zeros((1, 1)), tol=0)


def test_fixed_point_unique_and_bounded():
    m = build_random_mdp(12, 3, 3, 1.0, 0.9, seed=9)
    dyn = fit_empirical(full_dataset(m, episodes=30), discount=0.9)
    adm = AdmissibleActionSets.from_dynamics(dyn)
    tol = 1e-10
    rng = np.random.default_rng(0)
    a, _ = solve_fixed_point(lambda q: outcome_driven_backup(q, dyn, adm), rng.uniform(-50, 50, (12, 3)), tol=tol)
    b, _ = solve_fixed_point(lambda q: outcome_driven_backup(q, dyn, adm), rng.uniform(-50, 50, (12, 3)), tol=tol)
    assert np.abs(a - b).max() <= 10 * tol * 10  # each side within tol/(1-gamma) of the fixed point
    bound = m.r_max / (1 - 0.9)
    assert (np.abs(a) <= bound + 1e-9).all()


def test_outcome_driven_never_exceeds_standard():
    m = build_random_mdp(10, 3, 2, 1.0, 0.9, seed=3)
    dyn = fit_empirical(full_dataset(m, episodes=8), discount=0.9)
    adm = AdmissibleActionSets.from_dynamics(dyn)
    q = np.random.default_rng(2).normal(size=(10, 3))
    assert (outcome_driven_backup(q, dyn, adm) <= standard_backup(q, dyn) + 1e-12).all()


def test_contraction_reports():
    m = build_random_mdp(6, 2, 2, 1.0, 0.9, seed=0)
    rep = verify_contraction(lambda q: standard_backup(q, m), 0.9, (6, 2), trials=1, seed=0)
    assert rep["pass"] and rep["max_ratio"] == 0.0  # u = v on the first trial
    rep = verify_contraction(lambda q: standard_backup(q, m), 0.9, (6, 2), trials=200, seed=0)
    assert rep["pass"] and rep["max_ratio"] <= 0.9 + 1e-9
    bad = verify_contraction(lambda q: 2 * q, 0.9, (2, 2), trials=5, seed=0)
    assert not bad["pass"] and "counterexample" in bad
    with pytest.raises(ValueError):
        verify_contraction(lambda q: q, 0.9, (1, 1), trials=0, seed=0)


def test_convergence_envelope():
    m = build_random_mdp(8, 3, 3, 1.0, 0.9, seed=1)
    dyn = fit_empirical(full_dataset(m, episodes=50), discount=0.9)
    rep = verify_convergence_rate(dyn, np.zeros((8, 3)), k_max=60)
    assert rep["pass"]
    e = rep["errors"]
    assert e[20] <= 0.9**20 * e[0] + 1e-12
    assert 0.9**20 == pytest.approx(0.1216, abs=1e-4)


def test_gap_table_shrinks():
    rep = statistical_gap_table(build_random_mdp(6, 2, 2, 1.0, 0.9, seed=7), sizes=(100, 1000, 10000))
    assert rep["pass"]
    assert [row["N"] for row in rep["gap_table"]] == [100, 1000, 10000]


def test_coverage_full_coverage():
    m = build_random_mdp(4, 2, 2, 1.0, 0.9, seed=5)
    dyn = fit_empirical(full_dataset(m, episodes=3000, horizon=20), discount=0.9)
    rep = verify_coverage_agreement(m, dyn)
    assert rep["pass"] and rep["agree"]
    q_hat = exact_fixed_point(dyn, AdmissibleActionSets.from_dynamics(dyn))
    np.testing.assert_allclose(q_hat, oracle_value_iteration(m), atol=0.1)


def test_coverage_single_state():
    m = one_state()
    d = TransitionDataset.from_transitions([Transition(0, 0, 1.0, 0, False)], 1, 1)
    assert verify_coverage_agreement(m, fit_empirical(d, discount=0.5))["agree"]
