"""
Robots-to-goals and goals-to-goals travel cost matrices.

Every entry is an obstacle-aware shortest-path length from the voxel grid;
unreachable pairs hold +inf. Searches are independent and fan out over a
thread pool, with results merged by index so the matrices do not depend on
the worker count.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from drone_mission_planner.errors import EmptyProblemError, OutOfBoundsError
from drone_mission_planner.grid import CellIndex, GeometricPath, OccupancyGrid, shortest_path
from drone_mission_planner.run_log import null_log
from drone_mission_planner.scenario import Scenario

UNREACHABLE = math.inf

PathMatrix = List[List[Optional[GeometricPath]]]


@dataclass(eq=False)
class CostMatrices:
    """Travel costs in meters plus the geometric paths behind them."""

    c_rg: np.ndarray
    c_gg: np.ndarray
    paths_rg: PathMatrix
    paths_gg: PathMatrix
    robot_ids: Tuple[str, ...] = ()
    goal_ids: Tuple[int, ...] = ()

    @property
    def n_robots(self) -> int:
        return self.c_rg.shape[0]

    @property
    def n_goals(self) -> int:
        return self.c_rg.shape[1]

    def scaled(self, factor: float) -> "CostMatrices":
        """Copy with every cost multiplied by `factor` (paths are shared)."""
        return CostMatrices(
            self.c_rg * factor,
            self.c_gg * factor,
            self.paths_rg,
            self.paths_gg,
            self.robot_ids,
            self.goal_ids,
        )

    def leg_path(self, robot: Optional[int], from_goal: Optional[int], to_goal: Optional[int]) -> Optional[GeometricPath]:
        """
        Path for one tour leg, oriented in travel direction.

        Pass `robot` with `from_goal=None` for the outbound leg, with
        `to_goal=None` for the return leg, or two goals for a transfer.
        """
        if from_goal is None and to_goal is not None:
            return self.paths_rg[robot][to_goal]
        if to_goal is None and from_goal is not None:
            path = self.paths_rg[robot][from_goal]
            return path.reversed() if path is not None else None
        if from_goal == to_goal:
            return self.paths_gg[from_goal][to_goal]
        path = self.paths_gg[from_goal][to_goal]
        if path is None:
            return None
        if from_goal > to_goal:
            return path.reversed()
        return path


@dataclass(eq=False)
class FilteredProblem:
    """Cost matrices restricted to reachable robots and goals."""

    matrices: CostMatrices
    active_goals: Tuple[int, ...]
    active_robots: Tuple[int, ...]
    dropped_goals: Tuple[Tuple[int, str], ...] = ()
    dropped_robots: Tuple[Tuple[int, str], ...] = ()
    components: Tuple[Tuple[Tuple[int, ...], Tuple[int, ...]], ...] = field(default_factory=tuple)

    @property
    def n_robots(self) -> int:
        return len(self.active_robots)

    @property
    def n_goals(self) -> int:
        return len(self.active_goals)


def _entity_cell(grid: OccupancyGrid, point) -> Optional[CellIndex]:
    try:
        cell = grid.world_to_cell(point)
    except OutOfBoundsError:
        return None
    return None if grid.is_blocked(cell) else cell


def build_cost_matrices(
    g: OccupancyGrid,
    s: Scenario,
    max_workers: int = 1,
    log: Callable[[str], None] = null_log,
) -> CostMatrices:
    """
    Populate C_RG and C_GG by graph search.

    Only the upper triangle of C_GG is searched; the lower triangle mirrors it.

    Args:
        g: Grid built from `s`
        s: Scenario
        max_workers: Thread pool size for the independent searches
        log: Log sink

    Returns:
        CostMatrices with +inf for unreachable pairs
    """
    n_r, n_g = s.n_robots, s.n_goals
    robot_cells = [_entity_cell(g, p) for p in s.robot_starts]
    goal_cells = [_entity_cell(g, p) for p in s.goals]
    for idx, cell in enumerate(robot_cells):
        if cell is None:
            log(f"Robot {s.robot_id(idx)} starts in a blocked cell; marked unreachable")
    for idx, cell in enumerate(goal_cells):
        if cell is None:
            log(f"Goal {idx} lies in a blocked cell; marked unreachable")

    jobs: List[Tuple[str, int, int, CellIndex, CellIndex]] = []
    for i in range(n_r):
        for j in range(n_g):
            if robot_cells[i] is not None and goal_cells[j] is not None:
                jobs.append(("rg", i, j, robot_cells[i], goal_cells[j]))
    for p in range(n_g):
        for q in range(p + 1, n_g):
            if goal_cells[p] is not None and goal_cells[q] is not None:
                jobs.append(("gg", p, q, goal_cells[p], goal_cells[q]))

    def _search(job: Tuple[str, int, int, CellIndex, CellIndex]) -> Optional[GeometricPath]:
        return shortest_path(g, job[3], job[4], s.connectivity)

    if max_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            results = list(executor.map(_search, jobs))
    else:
        results = [_search(job) for job in jobs]

    c_rg = np.full((n_r, n_g), UNREACHABLE)
    c_gg = np.full((n_g, n_g), UNREACHABLE)
    paths_rg: PathMatrix = [[None] * n_g for _ in range(n_r)]
    paths_gg: PathMatrix = [[None] * n_g for _ in range(n_g)]

    for job, path in zip(jobs, results):
        kind, a, b = job[0], job[1], job[2]
        if path is None:
            continue
        if kind == "rg":
            c_rg[a, b] = path.cost
            paths_rg[a][b] = path
        else:
            c_gg[a, b] = c_gg[b, a] = path.cost
            paths_gg[a][b] = path
            paths_gg[b][a] = path

    for p in range(n_g):
        c_gg[p, p] = 0.0
        if goal_cells[p] is not None:
            paths_gg[p][p] = shortest_path(g, goal_cells[p], goal_cells[p], s.connectivity)

    log(
        f"Cost matrices built: {len(jobs)} searches, "
        f"{int(np.isfinite(c_rg).sum())}/{c_rg.size} robot-goal pairs reachable"
    )
    robot_ids = tuple(s.robot_id(i) for i in range(n_r))
    return CostMatrices(c_rg, c_gg, paths_rg, paths_gg, robot_ids, tuple(range(n_g)))


def _restrict(m: CostMatrices, robots: Sequence[int], goals: Sequence[int]) -> CostMatrices:
    robots = list(robots)
    goals = list(goals)
    c_rg = m.c_rg[np.ix_(robots, goals)] if robots and goals else np.zeros((len(robots), len(goals)))
    c_gg = m.c_gg[np.ix_(goals, goals)] if goals else np.zeros((0, 0))
    paths_rg = [[m.paths_rg[i][j] for j in goals] for i in robots]
    paths_gg = [[m.paths_gg[p][q] for q in goals] for p in goals]
    robot_ids = tuple(m.robot_ids[i] for i in robots) if m.robot_ids else tuple(str(i) for i in robots)
    goal_ids = tuple(m.goal_ids[j] for j in goals) if m.goal_ids else tuple(goals)
    return CostMatrices(c_rg.copy(), c_gg.copy(), paths_rg, paths_gg, robot_ids, goal_ids)


def reachability_components(m: CostMatrices) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """Connected groups of (robots, goals) linked by finite costs."""
    graph = nx.Graph()
    graph.add_nodes_from(("r", i) for i in range(m.n_robots))
    graph.add_nodes_from(("g", j) for j in range(m.n_goals))
    for i, j in zip(*np.nonzero(np.isfinite(m.c_rg))):
        graph.add_edge(("r", int(i)), ("g", int(j)))
    for p, q in zip(*np.nonzero(np.isfinite(m.c_gg))):
        if p < q:
            graph.add_edge(("g", int(p)), ("g", int(q)))
    groups = []
    for component in nx.connected_components(graph):
        robots = tuple(sorted(idx for kind, idx in component if kind == "r"))
        goals = tuple(sorted(idx for kind, idx in component if kind == "g"))
        groups.append((robots, goals))
    groups.sort(key=lambda grp: (grp[0][:1] or (math.inf,), grp[1][:1] or (math.inf,)))
    return groups


def filter_unreachable(m: CostMatrices) -> FilteredProblem:
    """
    Drop goals no robot can reach and robots that reach no goal.

    Args:
        m: Full cost matrices

    Returns:
        FilteredProblem whose indices refer to positions in `m`

    Raises:
        EmptyProblemError: If every goal is dropped
    """
    finite = np.isfinite(m.c_rg)
    dropped_goals = [
        (j, "unreachable from all robots") for j in range(m.n_goals) if not finite[:, j].any()
    ]
    dropped_robots = [
        (i, "cannot reach any goal") for i in range(m.n_robots) if not finite[i, :].any()
    ]
    active_goals = tuple(j for j in range(m.n_goals) if finite[:, j].any())
    active_robots = tuple(i for i in range(m.n_robots) if finite[i, :].any())
    if not active_goals:
        raise EmptyProblemError("all goals are unreachable; nothing to plan")

    restricted = _restrict(m, active_robots, active_goals)
    return FilteredProblem(
        matrices=restricted,
        active_goals=active_goals,
        active_robots=active_robots,
        dropped_goals=tuple(dropped_goals),
        dropped_robots=tuple(dropped_robots),
        components=tuple(reachability_components(restricted)),
    )


def format_cost(value: float) -> str:
    return "inf" if not math.isfinite(value) else repr(float(value))


def write_matrix_csv(
    path: Path, matrix: np.ndarray, row_ids: Sequence[object], col_ids: Sequence[object]
) -> Path:
    """
    Write a cost matrix with entity-id headers; unreachable entries print as `inf`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([""] + [str(c) for c in col_ids])
        for row_id, row in zip(row_ids, matrix):
            writer.writerow([str(row_id)] + [format_cost(v) for v in row])
    return path


def read_matrix_csv(path: Path) -> Tuple[List[str], List[str], np.ndarray]:
    """Read back a matrix written by write_matrix_csv."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    col_ids = rows[0][1:]
    row_ids = [row[0] for row in rows[1:]]
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=float)
    return row_ids, col_ids, values

