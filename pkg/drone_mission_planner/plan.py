"""
Plan representation and makespan evaluation.

A plan is a permutation of the active goals cut into contiguous per-robot
tours by breakpoints. Every robot flies a closed tour: start, assigned goals
in order, back to start.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from drone_mission_planner.cost_matrices import CostMatrices
from drone_mission_planner.scenario import DynamicsLimits


@dataclass(frozen=True)
class Plan:
    """Goal permutation plus breakpoints; indices refer to the filtered problem."""

    permutation: Tuple[int, ...]
    breakpoints: Tuple[int, ...]

    @property
    def n_robots(self) -> int:
        return len(self.breakpoints) + 1

    @property
    def tours(self) -> Tuple[Tuple[int, ...], ...]:
        """Per-robot goal sequences: contiguous slices of the permutation."""
        cuts = (0,) + tuple(self.breakpoints) + (len(self.permutation),)
        return tuple(tuple(self.permutation[cuts[r] : cuts[r + 1]]) for r in range(self.n_robots))

    @classmethod
    def from_tours(cls, tours: Sequence[Sequence[int]]) -> "Plan":
        permutation: List[int] = []
        breakpoints: List[int] = []
        for idx, tour in enumerate(tours):
            permutation.extend(int(g) for g in tour)
            if idx < len(tours) - 1:
                breakpoints.append(len(permutation))
        return cls(tuple(permutation), tuple(breakpoints))


def assignment_matrix(plan: Plan, n_goals: int) -> np.ndarray:
    """ψ[i, j] = 1 when goal j belongs to robot i's tour."""
    psi = np.zeros((plan.n_robots, n_goals), dtype=bool)
    for robot, tour in enumerate(plan.tours):
        for goal in tour:
            psi[robot, goal] = True
    return psi


def plan_is_feasible(plan: Plan, n_goals: int, n_robots: int) -> bool:
    """True when the plan visits every goal exactly once with valid breakpoints."""
    if len(plan.breakpoints) != n_robots - 1:
        return False
    if sorted(plan.permutation) != list(range(n_goals)):
        return False
    previous = 0
    for cut in plan.breakpoints:
        if cut < previous or cut > n_goals:
            return False
        previous = cut
    return True


def closed_tour_length(robot: int, tour: Sequence[int], m: CostMatrices) -> float:
    """
    Length of start → tour → start in meters; +inf when any leg is unreachable.
    """
    if not tour:
        return 0.0
    total = float(m.c_rg[robot, tour[0]])
    for a, b in zip(tour, tour[1:]):
        total += float(m.c_gg[a, b])
    total += float(m.c_rg[robot, tour[-1]])
    return total if not math.isnan(total) else math.inf


def tour_lengths(plan: Plan, m: CostMatrices) -> List[float]:
    return [closed_tour_length(robot, tour, m) for robot, tour in enumerate(plan.tours)]


def makespan_from_lengths(lengths: Sequence[float], limits: DynamicsLimits) -> float:
    """Slowest tour converted to seconds at the shared cruise speed."""
    longest = max(lengths) if lengths else 0.0
    if not math.isfinite(longest):
        return math.inf
    return longest / limits.v_max_drone


def makespan(plan: Plan, m: CostMatrices, limits: DynamicsLimits) -> float:
    """
    Mission makespan of a plan in seconds.

    Raises:
        AssertionError: If the plan does not assign every goal to exactly one robot
    """
    psi = assignment_matrix(plan, m.n_goals)
    assert np.all(psi.sum(axis=0) == 1), "each goal must be assigned to exactly one robot"
    assert len(plan.permutation) == m.n_goals, "plan visits a goal more than once"
    return makespan_from_lengths(tour_lengths(plan, m), limits)
