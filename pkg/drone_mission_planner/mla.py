"""
Multiple linear assignment seeding.

Each robot is replicated into slots and goals are matched to slots by a
rectangular linear assignment on the robots-to-goals costs; every robot's
share is then ordered by nearest neighbour and polished with 2-opt. The
resulting plans seed the particle swarm and are re-injected periodically.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from drone_mission_planner.cost_matrices import CostMatrices, FilteredProblem
from drone_mission_planner.plan import Plan, closed_tour_length


@dataclass(frozen=True)
class MlaConfig:
    """Seeder settings."""

    slots_per_robot: Optional[int] = None
    local_improve: bool = True
    noise: float = 0.01
    vary_capacity: bool = True
    reuse_initial_seeds: bool = False

    def slots_for(self, n_goals: int, n_robots: int) -> int:
        return self.slots_per_robot or int(math.ceil(n_goals / n_robots))


def _slot_costs(c_rg: np.ndarray, slots: int, rng: Optional[np.random.Generator], noise: float) -> np.ndarray:
    costs = np.repeat(c_rg, slots, axis=0)
    if rng is not None and noise > 0.0:
        costs = costs * (1.0 + rng.uniform(-noise, noise, size=costs.shape))
    finite = costs[np.isfinite(costs)]
    largest = float(finite.max()) if finite.size else 1.0
    big = max(largest, 1.0) * 1e6 * (c_rg.shape[1] + 1)
    return np.where(np.isfinite(costs), costs, big)


def mla_assign(
    fp: FilteredProblem,
    cfg: MlaConfig,
    rng: Optional[np.random.Generator] = None,
    slots: Optional[int] = None,
) -> List[List[int]]:
    """
    Partition the active goals among robots by slot-replicated linear assignment.

    Args:
        fp: Non-empty filtered problem
        cfg: Seeder config
        rng: When given, slot costs get ±cfg.noise multiplicative noise
        slots: Slot count per robot (defaults to cfg)

    Returns:
        Per-robot sorted goal lists, disjoint and covering every goal
    """
    m = fp.matrices
    n_r, n_g = m.n_robots, m.n_goals
    k = slots or cfg.slots_for(n_g, n_r)
    if k * n_r < n_g:
        raise ValueError(f"slots_per_robot={k} cannot cover {n_g} goals with {n_r} robots")

    while True:
        costs = _slot_costs(m.c_rg, k, rng, cfg.noise)
        rows, cols = linear_sum_assignment(costs)
        groups: List[List[int]] = [[] for _ in range(n_r)]
        feasible = True
        for row, col in zip(rows, cols):
            robot = row // k
            if not math.isfinite(m.c_rg[robot, col]):
                feasible = False
            groups[robot].append(int(col))
        if feasible or k >= n_g:
            break
        # Some goal was forced onto a robot that cannot reach it: widen capacity.
        k += 1

    assert sum(len(g) for g in groups) == n_g
    assert feasible, "a goal is unreachable from every robot after filtering"
    return [sorted(group) for group in groups]


def _closest(current_costs: np.ndarray, remaining: List[int], rng: Optional[np.random.Generator]) -> int:
    values = [current_costs[g] for g in remaining]
    best = min(values)
    ties = [g for g, v in zip(remaining, values) if v == best]
    if rng is not None and len(ties) > 1:
        return ties[int(rng.integers(len(ties)))]
    return ties[0]


def two_opt(robot: int, tour: Sequence[int], m: CostMatrices) -> List[int]:
    """Reverse sub-sequences while the closed-tour length strictly improves."""
    best = list(tour)
    best_cost = closed_tour_length(robot, best, m)
    improved = True
    while improved and len(best) > 1:
        improved = False
        for i in range(len(best) - 1):
            for j in range(i + 1, len(best)):
                candidate = best[:i] + best[i : j + 1][::-1] + best[j + 1 :]
                cost = closed_tour_length(robot, candidate, m)
                if cost < best_cost and (
                    not math.isfinite(best_cost) or best_cost - cost > 1e-12 * best_cost
                ):
                    best, best_cost = candidate, cost
                    improved = True
                    break
            if improved:
                break
    return best


def order_tour(
    robot: int,
    goals: Sequence[int],
    m: CostMatrices,
    cfg: MlaConfig,
    rng: Optional[np.random.Generator] = None,
) -> List[int]:
    """
    Order a robot's goals: nearest neighbour from its start, then optional 2-opt.

    Ties in the nearest-neighbour choice go to the lowest goal index, or to a
    random tied goal when `rng` is given.
    """
    remaining = list(goals)
    sequence: List[int] = []
    current_costs = m.c_rg[robot]
    while remaining:
        nxt = _closest(current_costs, remaining, rng)
        sequence.append(nxt)
        remaining.remove(nxt)
        current_costs = m.c_gg[nxt]
    if cfg.local_improve and len(sequence) > 2:
        sequence = two_opt(robot, sequence, m)
    return sequence


def mla_seed_plan(fp: FilteredProblem, cfg: MlaConfig, rng: Optional[np.random.Generator] = None) -> Plan:
    """
    Build one feasible plan from MLA partitioning plus per-robot ordering.

    Without `rng` the result is deterministic. With it, slot costs are
    perturbed, tie-breaks are randomised and (if cfg.vary_capacity) the slot
    capacity is drawn between the balanced value and G_N.
    """
    m = fp.matrices
    slots = None
    if rng is not None and cfg.vary_capacity and cfg.slots_per_robot is None:
        low = cfg.slots_for(m.n_goals, m.n_robots)
        slots = int(rng.integers(low, m.n_goals + 1))
    groups = mla_assign(fp, cfg, rng=rng, slots=slots)
    tours = [order_tour(robot, group, m, cfg, rng) if group else [] for robot, group in enumerate(groups)]
    return Plan.from_tours(tours)


class MlaSeeder:
    """Supplies MLA plans for swarm initialisation and periodic injection."""

    def __init__(self, fp: FilteredProblem, cfg: MlaConfig, rng: np.random.Generator) -> None:
        self.fp = fp
        self.cfg = cfg
        self.rng = rng
        self._initial: List[Plan] = []
        self._cursor = 0

    def initial_plans(self, count: int) -> List[Plan]:
        """The deterministic MLA plan followed by noisy variants."""
        plans: List[Plan] = []
        if count > 0:
            plans.append(mla_seed_plan(self.fp, self.cfg))
        while len(plans) < count:
            plans.append(mla_seed_plan(self.fp, self.cfg, self.rng))
        self._initial = list(plans)
        return plans

    def injection_plans(self, count: int) -> List[Plan]:
        """Fresh noisy plans, or the initial seeds in rotation when configured."""
        if self.cfg.reuse_initial_seeds and self._initial:
            plans = []
            for _ in range(count):
                plans.append(self._initial[self._cursor % len(self._initial)])
                self._cursor += 1
            return plans
        return [mla_seed_plan(self.fp, self.cfg, self.rng) for _ in range(count)]
