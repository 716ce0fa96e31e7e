"""
Unit tests for MLA seeding.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from drone_mission_planner.mla import (
    MlaConfig,
    MlaSeeder,
    mla_assign,
    mla_seed_plan,
    order_tour,
    two_opt,
)
from drone_mission_planner.plan import closed_tour_length, plan_is_feasible


def test_assignment_partitions_every_goal(euclidean_problem) -> None:
    fp = euclidean_problem(3, 8, seed=5)
    groups = mla_assign(fp, MlaConfig())

    assert len(groups) == 3
    assert sorted(g for group in groups for g in group) == list(range(8))
    assert all(len(group) <= 3 for group in groups)


def test_assignment_widens_capacity_for_restricted_robots(make_problem) -> None:
    inf = math.inf
    goals = np.array([1.0, 2.0, 3.0, 4.0])
    c_rg = [[1.0, 2.0, 3.0, 4.0], [inf, inf, inf, 1.0]]
    fp = make_problem(c_rg, np.abs(goals[:, None] - goals[None, :]))

    assert mla_assign(fp, MlaConfig()) == [[0, 1, 2], [3]]


def test_assignment_rejects_too_few_slots(euclidean_problem) -> None:
    fp = euclidean_problem(2, 5)
    with pytest.raises(ValueError):
        mla_assign(fp, MlaConfig(slots_per_robot=2))


def test_nearest_neighbour_order(corridor_problem) -> None:
    order = order_tour(0, [2, 0, 1], corridor_problem.matrices, MlaConfig())
    assert order == [0, 1, 2]


def test_two_opt_removes_crossing(make_problem) -> None:
    goals = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    c_rg = np.linalg.norm(goals, axis=1)[None, :]
    c_gg = np.linalg.norm(goals[:, None, :] - goals[None, :, :], axis=2)
    m = make_problem(c_rg, c_gg).matrices

    crossing = [0, 2, 1]
    improved = two_opt(0, crossing, m)
    assert closed_tour_length(0, improved, m) == pytest.approx(4.0)
    assert closed_tour_length(0, improved, m) < closed_tour_length(0, crossing, m)


def test_seed_plan_is_deterministic_without_rng(euclidean_problem) -> None:
    fp = euclidean_problem(3, 7, seed=11)
    first = mla_seed_plan(fp, MlaConfig())
    assert first == mla_seed_plan(fp, MlaConfig())
    assert plan_is_feasible(first, 7, 3)


def test_noisy_seed_plans_stay_feasible(euclidean_problem) -> None:
    fp = euclidean_problem(3, 7, seed=11)
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert plan_is_feasible(mla_seed_plan(fp, MlaConfig(), rng), 7, 3)


def test_corridor_seed_is_optimal(corridor_problem) -> None:
    plan = mla_seed_plan(corridor_problem, MlaConfig())
    assert plan.tours == ((0, 1, 2), (5, 4, 3))


def test_seeder_starts_with_deterministic_plan(euclidean_problem) -> None:
    fp = euclidean_problem(2, 6, seed=2)
    seeder = MlaSeeder(fp, MlaConfig(), np.random.default_rng(0))
    plans = seeder.initial_plans(4)

    assert len(plans) == 4
    assert plans[0] == mla_seed_plan(fp, MlaConfig())
    assert seeder.initial_plans(0) == []


def test_seeder_can_rotate_initial_plans(euclidean_problem) -> None:
    fp = euclidean_problem(2, 6, seed=2)
    seeder = MlaSeeder(fp, MlaConfig(reuse_initial_seeds=True), np.random.default_rng(0))
    initial = seeder.initial_plans(3)
    assert seeder.injection_plans(4) == initial + initial[:1]


def _best_slot_assignment(c_rg: np.ndarray, slots: int) -> float:
    n_r, n_g = c_rg.shape
    best = math.inf
    for owners in itertools.product(range(n_r), repeat=n_g):
        if max(owners.count(r) for r in range(n_r)) > slots:
            continue
        best = min(best, sum(c_rg[r, j] for j, r in enumerate(owners)))
    return best


@pytest.mark.parametrize("seed", range(10))
def test_assignment_matches_exhaustive_slot_optimum(euclidean_problem, seed: int) -> None:
    fp = euclidean_problem(3, 6, seed=seed)
    c_rg = fp.matrices.c_rg
    groups = mla_assign(fp, MlaConfig())

    cost = sum(c_rg[r, j] for r, group in enumerate(groups) for j in group)
    assert cost == pytest.approx(_best_slot_assignment(c_rg, 2), rel=1e-12)


def test_two_opt_never_loses_to_nearest_neighbour(euclidean_problem) -> None:
    optimal_hits = 0
    for seed in range(200):
        fp = euclidean_problem(1, 5, seed=seed)
        m = fp.matrices
        goals = list(range(5))
        greedy = order_tour(0, goals, m, MlaConfig(local_improve=False))
        polished = order_tour(0, goals, m, MlaConfig())
        best = min(closed_tour_length(0, list(p), m) for p in itertools.permutations(goals))

        assert closed_tour_length(0, polished, m) <= closed_tour_length(0, greedy, m)
        if closed_tour_length(0, polished, m) <= best * (1.0 + 1e-9):
            optimal_hits += 1
    assert optimal_hits >= 140
