"""
Voxel occupancy grid and obstacle-avoiding graph search.

The workspace is discretised into cubic cells; cells whose centre lies within
the robot safety radius of an obstacle are blocked. Shortest paths between
free cells are found with A* under Euclidean edge weights.
"""

import heapq
import itertools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from drone_mission_planner.errors import (
    BlockedEndpointError,
    GridTooLargeError,
    OutOfBoundsError,
)
from drone_mission_planner.scenario import Scenario, Vec3

DEFAULT_MAX_CELLS = 50_000_000
MAX_CELLS_ENV = "MISSION_PLANNER_MAX_GRID_CELLS"

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
_STEP_FACTORS = (0.0, 1.0, SQRT2, SQRT3)


class CellIndex(NamedTuple):
    """Integer grid coordinates of a voxel."""

    i: int
    j: int
    k: int


def _build_moves(connectivity: int) -> List[Tuple[Tuple[int, int, int], int, Tuple[Tuple[int, int, int], ...]]]:
    """Offsets, step class (number of changed axes) and the face/edge cells each move sweeps past."""
    moves = []
    for offset in itertools.product((-1, 0, 1), repeat=3):
        nonzero = [axis for axis in range(3) if offset[axis] != 0]
        if not nonzero:
            continue
        if connectivity == 6 and len(nonzero) != 1:
            continue
        intermediates = []
        for size in range(1, len(nonzero)):
            for axes in itertools.combinations(nonzero, size):
                partial = tuple(offset[a] if a in axes else 0 for a in range(3))
                intermediates.append(partial)
        moves.append((offset, len(nonzero), tuple(intermediates)))
    return moves


_MOVES = {6: _build_moves(6), 26: _build_moves(26)}


def step_length(step_class: int, resolution: float) -> float:
    """Length of a move changing `step_class` axes."""
    return resolution * _STEP_FACTORS[step_class]


def _length_from_counts(counts: Sequence[int], resolution: float) -> float:
    return resolution * (counts[0] + counts[1] * SQRT2 + counts[2] * SQRT3)


def path_cost(cells: Sequence[Sequence[int]], resolution: float) -> float:
    """
    Euclidean length of a cell path.

    The length is assembled from the counts of axis, face-diagonal and
    cube-diagonal steps so equal step counts always give identical floats.
    """
    counts = [0, 0, 0]
    for a, b in zip(cells, cells[1:]):
        changed = sum(1 for axis in range(3) if a[axis] != b[axis])
        if changed:
            counts[changed - 1] += 1
    return _length_from_counts(counts, resolution)


@dataclass(frozen=True, eq=False)
class GeometricPath:
    """Collision-free cell path with its cell-centre waypoints and length."""

    cells: Tuple[CellIndex, ...]
    waypoints: np.ndarray
    cost: float

    def reversed(self) -> "GeometricPath":
        return GeometricPath(tuple(reversed(self.cells)), self.waypoints[::-1].copy(), self.cost)

    def __len__(self) -> int:
        return len(self.cells)


class OccupancyGrid:
    """Voxelised free/blocked space with world and cell coordinate mapping."""

    def __init__(
        self,
        dims: Tuple[int, int, int],
        resolution: float,
        origin: Vec3,
        blocked: np.ndarray,
        inflation_radius: float,
        connectivity: int = 26,
    ) -> None:
        if blocked.shape != tuple(dims):
            raise ValueError(f"blocked field shape {blocked.shape} does not match dims {dims}")
        self.dims = tuple(int(d) for d in dims)
        self.resolution = float(resolution)
        self.origin = origin
        self.blocked = blocked
        self.blocked.setflags(write=False)
        self.inflation_radius = float(inflation_radius)
        self.connectivity = connectivity
        self._origin_array = origin.as_array()
        self._flat = blocked.ravel().tolist()
        self._stride = (self.dims[1] * self.dims[2], self.dims[2])
        self._nx_graph: Optional[nx.Graph] = None

    @property
    def cell_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def blocked_count(self) -> int:
        return int(np.count_nonzero(self.blocked))

    @property
    def extent_max(self) -> np.ndarray:
        return self._origin_array + np.array(self.dims, dtype=float) * self.resolution

    def in_grid(self, cell: Sequence[int]) -> bool:
        return all(0 <= cell[a] < self.dims[a] for a in range(3))

    def is_blocked(self, cell: Sequence[int]) -> bool:
        return bool(self._flat[cell[0] * self._stride[0] + cell[1] * self._stride[1] + cell[2]])

    def is_free(self, cell: Sequence[int]) -> bool:
        return self.in_grid(cell) and not self.is_blocked(cell)

    def world_to_cell(self, point: Sequence[float]) -> CellIndex:
        """
        Map a world point to the cell containing it.

        Points on a shared cell face belong to the lower-index cell.

        Raises:
            OutOfBoundsError: If the point lies outside the grid
        """
        p = np.asarray(point.as_array() if isinstance(point, Vec3) else point, dtype=float)
        tol = 1e-9 * max(1.0, self.resolution)
        if np.any(p < self._origin_array - tol) or np.any(p > self.extent_max + tol):
            raise OutOfBoundsError(f"point {p.tolist()} lies outside the grid")
        scaled = (p - self._origin_array) / self.resolution
        index = []
        for axis in range(3):
            value = math.ceil(scaled[axis]) - 1
            index.append(min(max(value, 0), self.dims[axis] - 1))
        return CellIndex(*index)

    def cell_to_world(self, cell: Sequence[int]) -> np.ndarray:
        """Centre of a cell in world coordinates."""
        return self._origin_array + (np.asarray(cell, dtype=float) + 0.5) * self.resolution

    def neighbors(self, cell: Sequence[int], connectivity: Optional[int] = None) -> Iterator[Tuple[CellIndex, int]]:
        """
        Free neighbours of a cell with the step class of each move.

        Diagonal moves are skipped when any face or edge cell they sweep past is blocked.
        """
        ci, cj, ck = cell
        for offset, step_class, intermediates in _MOVES[connectivity or self.connectivity]:
            target = (ci + offset[0], cj + offset[1], ck + offset[2])
            if not self.is_free(target):
                continue
            if any(
                not self.is_free((ci + m[0], cj + m[1], ck + m[2])) for m in intermediates
            ):
                continue
            yield CellIndex(*target), step_class

    def free_cells(self) -> Iterator[CellIndex]:
        for index in zip(*np.nonzero(~self.blocked)):
            yield CellIndex(int(index[0]), int(index[1]), int(index[2]))

    def with_blocked(self, cells: Iterable[Sequence[int]]) -> "OccupancyGrid":
        """Copy of this grid with additional blocked cells."""
        blocked = self.blocked.copy()
        for cell in cells:
            if self.in_grid(cell):
                blocked[tuple(cell)] = True
        return OccupancyGrid(
            self.dims, self.resolution, self.origin, blocked, self.inflation_radius, self.connectivity
        )

    def to_networkx(self) -> nx.Graph:
        """Undirected graph of free cells, edges weighted by Euclidean step length."""
        if self._nx_graph is None:
            graph = nx.Graph()
            for cell in self.free_cells():
                graph.add_node(cell)
                for other, step_class in self.neighbors(cell):
                    if other > cell:
                        graph.add_edge(cell, other, weight=step_length(step_class, self.resolution))
            self._nx_graph = graph
        return self._nx_graph

    def segment_is_free(self, a: Sequence[float], b: Sequence[float]) -> bool:
        """Check a straight chord against blocked cells by dense sampling."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = float(np.linalg.norm(b - a))
        samples = max(2, int(math.ceil(length / (self.resolution * 0.1))) + 1)
        for t in np.linspace(0.0, 1.0, samples):
            point = a + t * (b - a)
            try:
                cell = self.world_to_cell(point)
            except OutOfBoundsError:
                return False
            if self.is_blocked(cell):
                return False
        return True

    def nearest_free_cell(self, point: Sequence[float], max_radius_cells: int = 4) -> Optional[CellIndex]:
        """Free cell whose centre is closest to a point, searched within a cube of cells."""
        p = np.asarray(point, dtype=float)
        clipped = np.clip(p, self._origin_array, self.extent_max)
        center = self.world_to_cell(clipped)
        best: Optional[Tuple[float, CellIndex]] = None
        r = max_radius_cells
        for di, dj, dk in itertools.product(range(-r, r + 1), repeat=3):
            cell = (center.i + di, center.j + dj, center.k + dk)
            if not self.is_free(cell):
                continue
            dist = float(np.linalg.norm(self.cell_to_world(cell) - p))
            candidate = (dist, CellIndex(*cell))
            if best is None or candidate < best:
                best = candidate
        return best[1] if best else None


def max_cells_from_env() -> int:
    """Cell cap, overridable via MISSION_PLANNER_MAX_GRID_CELLS."""
    try:
        return int(os.environ.get(MAX_CELLS_ENV, str(DEFAULT_MAX_CELLS)))
    except ValueError:
        return DEFAULT_MAX_CELLS


def build_grid(s: Scenario, max_cells: Optional[int] = None) -> OccupancyGrid:
    """
    Voxelise a scenario's workspace.

    Args:
        s: Valid scenario
        max_cells: Cell cap (defaults to the environment override or 50 million)

    Returns:
        OccupancyGrid with obstacles dilated by the safety radius

    Raises:
        GridTooLargeError: If the grid would exceed the cell cap
    """
    cap = max_cells if max_cells is not None else max_cells_from_env()
    res = s.grid_resolution
    lo = s.bounds_min.as_array()
    span = s.bounds_max.as_array() - lo
    dims = tuple(max(1, int(math.ceil(span[a] / res - 1e-9))) for a in range(3))
    count = dims[0] * dims[1] * dims[2]
    if count > cap:
        raise GridTooLargeError(f"grid of {dims} = {count} cells exceeds the cap of {cap} cells")

    blocked = np.zeros(dims, dtype=bool)
    radius = s.safety_radius
    centers = [lo[a] + (np.arange(dims[a]) + 0.5) * res for a in range(3)]
    for box in s.obstacles:
        box_lo = box.min_corner.as_array()
        box_hi = box.max_corner.as_array()
        slices = []
        sq = []
        for axis in range(3):
            start = max(0, int(math.floor((box_lo[axis] - radius - lo[axis]) / res)) - 1)
            stop = min(dims[axis], int(math.ceil((box_hi[axis] + radius - lo[axis]) / res)) + 1)
            c = centers[axis][start:stop]
            d = np.maximum(np.maximum(box_lo[axis] - c, 0.0), c - box_hi[axis])
            slices.append(slice(start, stop))
            sq.append(d * d)
        if any(s_.stop <= s_.start for s_ in slices):
            continue
        dist_sq = sq[0][:, None, None] + sq[1][None, :, None] + sq[2][None, None, :]
        blocked[slices[0], slices[1], slices[2]] |= dist_sq <= radius * radius

    return OccupancyGrid(dims, res, s.bounds_min, blocked, radius, s.connectivity)


def _heuristic(a: Sequence[int], b: Sequence[int], resolution: float) -> float:
    return resolution * math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def shortest_path(
    g: OccupancyGrid,
    start: Sequence[int],
    goal: Sequence[int],
    connectivity: Optional[int] = None,
) -> Optional[GeometricPath]:
    """
    A* search for a minimum-length cell path.

    The open set is ordered by f, then h, then cell index, which makes the
    returned path deterministic.

    Args:
        g: Occupancy grid
        start: Start cell
        goal: Goal cell
        connectivity: 6 or 26; defaults to the grid's connectivity

    Returns:
        GeometricPath, or None when the goal is unreachable

    Raises:
        BlockedEndpointError: If either endpoint is blocked or outside the grid
    """
    start = CellIndex(*start)
    goal = CellIndex(*goal)
    for name, cell in (("start", start), ("goal", goal)):
        if not g.is_free(cell):
            raise BlockedEndpointError(f"{name} cell {tuple(cell)} is blocked or outside the grid")

    res = g.resolution
    counts: Dict[CellIndex, Tuple[int, int, int]] = {start: (0, 0, 0)}
    best_g: Dict[CellIndex, float] = {start: 0.0}
    parent: Dict[CellIndex, CellIndex] = {}
    h0 = _heuristic(start, goal, res)
    open_heap: List[Tuple[float, float, CellIndex]] = [(h0, h0, start)]
    closed = set()

    while open_heap:
        _, _, current = heapq.heappop(open_heap)
        if current in closed:
            continue
        if current == goal:
            cells = [current]
            while cells[-1] in parent:
                cells.append(parent[cells[-1]])
            cells.reverse()
            waypoints = np.array([g.cell_to_world(c) for c in cells])
            return GeometricPath(tuple(cells), waypoints, _length_from_counts(counts[goal], res))
        closed.add(current)
        base = counts[current]
        for neighbor, step_class in g.neighbors(current, connectivity):
            if neighbor in closed:
                continue
            new_counts = list(base)
            new_counts[step_class - 1] += 1
            tentative = _length_from_counts(new_counts, res)
            if tentative < best_g.get(neighbor, math.inf):
                best_g[neighbor] = tentative
                counts[neighbor] = tuple(new_counts)
                parent[neighbor] = current
                h = _heuristic(neighbor, goal, res)
                heapq.heappush(open_heap, (tentative + h, h, neighbor))
    return None


def dump_occupancy(g: OccupancyGrid, prefix: Path) -> Tuple[Path, Path]:
    """
    Write the occupancy field for inspection tools.

    Produces `<prefix>.bin` (one byte per cell, row-major i, j, k; 1 = blocked)
    and `<prefix>.json` with dims, resolution and origin.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bin_path = prefix.with_suffix(".bin")
    json_path = prefix.with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(g.blocked, dtype=np.uint8).tobytes(order="C"))
    header = {
        "dims": list(g.dims),
        "resolution": g.resolution,
        "origin": g.origin.as_list(),
        "inflation_radius": g.inflation_radius,
        "order": "row-major i,j,k",
    }
    json_path.write_text(json.dumps(header, indent=2), encoding="utf-8")
    return bin_path, json_path
