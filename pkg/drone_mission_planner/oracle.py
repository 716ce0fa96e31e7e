"""
Brute-force reference solvers for small instances.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx

from drone_mission_planner.cost_matrices import CostMatrices, FilteredProblem
from drone_mission_planner.errors import BlockedEndpointError, OracleSizeError
from drone_mission_planner.grid import CellIndex, OccupancyGrid, path_cost
from drone_mission_planner.plan import Plan, closed_tour_length, makespan_from_lengths
from drone_mission_planner.scenario import DynamicsLimits

DEFAULT_MAX_GOALS = 8


@dataclass(frozen=True)
class OracleResult:
    """Exact optimum with every plan that attains it, in lexicographic order."""

    optimal_makespan: float
    plans: Tuple[Plan, ...]
    nodes_enumerated: int


def dijkstra_path(
    g: OccupancyGrid,
    start: Sequence[int],
    goal: Sequence[int],
) -> Optional[float]:
    """
    Shortest path cost by uniform Dijkstra over the grid's networkx graph.

    The cost is recomputed from the path's step counts so it is bit-identical
    to the A* result for equally long paths.

    Returns:
        Path length in meters, or None when unreachable

    Raises:
        BlockedEndpointError: If either endpoint is blocked
    """
    start = CellIndex(*start)
    goal = CellIndex(*goal)
    for name, cell in (("start", start), ("goal", goal)):
        if not g.is_free(cell):
            raise BlockedEndpointError(f"{name} cell {tuple(cell)} is blocked or outside the grid")
    if start == goal:
        return 0.0
    try:
        cells = nx.dijkstra_path(g.to_networkx(), start, goal, weight="weight")
    except nx.NetworkXNoPath:
        return None
    return path_cost(cells, g.resolution)


def plan_space_size(n_goals: int, n_robots: int) -> int:
    """G! · C(G + R - 1, R - 1): permutations times breakpoint placements."""
    return math.factorial(n_goals) * math.comb(n_goals + n_robots - 1, n_robots - 1)


def _enumerate_prefix(
    first: int,
    n_goals: int,
    n_robots: int,
    m: CostMatrices,
    limits: DynamicsLimits,
) -> Tuple[float, List[Plan], int]:
    cache: Dict[Tuple[int, Tuple[int, ...]], float] = {}
    best = math.inf
    best_plans: List[Plan] = []
    count = 0
    rest = [g for g in range(n_goals) if g != first]
    cut_options = list(itertools.combinations_with_replacement(range(n_goals + 1), n_robots - 1))
    for tail in itertools.permutations(rest):
        permutation = (first,) + tail
        for cuts in cut_options:
            plan = Plan(permutation, cuts)
            lengths = []
            for robot, tour in enumerate(plan.tours):
                key = (robot, tour)
                if key not in cache:
                    cache[key] = closed_tour_length(robot, tour, m)
                lengths.append(cache[key])
            value = makespan_from_lengths(lengths, limits)
            count += 1
            if value < best:
                best = value
                best_plans = [plan]
            elif value == best:
                best_plans.append(plan)
    return best, best_plans, count


def exhaustive_makespan(
    fp: FilteredProblem,
    m: CostMatrices,
    limits: DynamicsLimits,
    max_goals: int = DEFAULT_MAX_GOALS,
    max_workers: int = 1,
) -> OracleResult:
    """
    Enumerate every plan and return the minimum makespan.

    The search space is split by the first goal of the permutation and the
    partial optima are merged by min-reduction.

    Args:
        fp: Filtered problem
        m: Cost matrices of `fp`
        limits: Dynamics limits
        max_goals: Size cap on G_N
        max_workers: Threads for the partitions

    Returns:
        OracleResult with all optimal plans in lexicographic order

    Raises:
        OracleSizeError: If G_N exceeds max_goals
    """
    n_goals, n_robots = fp.n_goals, fp.n_robots
    if n_goals > max_goals:
        raise OracleSizeError(f"{n_goals} goals exceed the oracle limit of {max_goals}")
    if n_goals == 0 or n_robots == 0:
        raise OracleSizeError("the oracle needs at least one goal and one robot")

    def _run(first: int) -> Tuple[float, List[Plan], int]:
        return _enumerate_prefix(first, n_goals, n_robots, m, limits)

    if max_workers > 1 and n_goals > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            parts = list(executor.map(_run, range(n_goals)))
    else:
        parts = [_run(first) for first in range(n_goals)]

    best = min(part[0] for part in parts)
    plans = [plan for value, part_plans, _ in parts if value == best for plan in part_plans]
    plans.sort(key=lambda p: (p.permutation, p.breakpoints))
    return OracleResult(best, tuple(plans), sum(part[2] for part in parts))
