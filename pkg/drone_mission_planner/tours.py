"""
Per-robot tour assembly: legs, waypoints and the timed trajectory.
"""

from dataclasses import dataclass, field, replace
from typing import AbstractSet, Dict, List, Optional, Sequence, Tuple

import numpy as np

from drone_mission_planner.cost_matrices import CostMatrices, FilteredProblem
from drone_mission_planner.grid import GeometricPath, OccupancyGrid
from drone_mission_planner.minsnap import (
    MIN_SEGMENT_DURATION,
    ClearanceModel,
    PiecewiseTrajectory,
    WaypointSequence,
    allocate_times,
    build_tour_waypoints,
    dense_sample_times,
    retime,
    solve_minsnap,
)
from drone_mission_planner.plan import Plan
from drone_mission_planner.scenario import DynamicsLimits, Scenario

MAX_CLEARANCE_REFINEMENTS = 8
CLEARANCE_REFINE_MARGIN = 0.02


@dataclass(frozen=True, eq=False)
class RobotTour:
    """One robot's closed tour and its current trajectory."""

    robot: int
    robot_id: str
    start: np.ndarray
    goals: Tuple[int, ...]
    goal_points: np.ndarray
    legs: Tuple[GeometricPath, ...]
    waypoints: WaypointSequence
    trajectory: PiecewiseTrajectory
    dense_legs: AbstractSet[int] = field(default_factory=frozenset)
    clearance: Optional[ClearanceModel] = None

    @property
    def tour_length(self) -> float:
        """Grid length of the closed tour in meters."""
        return float(sum(leg.cost for leg in self.legs))

    @property
    def is_hover(self) -> bool:
        return not self.goals

    @property
    def delay(self) -> float:
        return self.trajectory.t0


def timed_trajectory(
    ws: WaypointSequence,
    tour_length: float,
    limits: DynamicsLimits,
    t0: float = 0.0,
) -> PiecewiseTrajectory:
    """
    Allocate durations, solve min-snap and retime.

    Durations are stretched so the tour never takes less than its grid length
    flown at v_max.
    """
    durations = allocate_times(ws, limits)
    floor = tour_length / limits.v_max_drone
    total = float(np.sum(durations))
    if total < floor:
        durations = durations * (floor / total)
    return retime(solve_minsnap(ws, durations, t0), limits)


def _path_position(ws: WaypointSequence, k: int, leg_no: int, centres: np.ndarray) -> int:
    """Index of waypoint k inside the dense path of leg `leg_no`."""
    if ws.leg_index[k] == leg_no and ws.cell_index[k] >= 0:
        return ws.cell_index[k]
    return int(np.argmin(np.linalg.norm(centres - ws.points[k], axis=1)))


def _refinement_cell(
    ws: WaypointSequence,
    seg: int,
    legs: Sequence[GeometricPath],
    location: np.ndarray,
    g: Optional[OccupancyGrid],
    clearance: ClearanceModel,
) -> Optional[Tuple[int, np.ndarray]]:
    """Path cell strictly between the ends of segment `seg`, nearest `location`, that keeps both chords free."""
    leg_no = ws.leg_index[seg + 1]
    centres = np.asarray(legs[leg_no].waypoints, dtype=float)
    lo = _path_position(ws, seg, leg_no, centres)
    hi = _path_position(ws, seg + 1, leg_no, centres)
    if hi - lo < 2:
        return None
    interior = np.arange(lo + 1, hi)
    usable = interior[clearance.clearance(centres[interior]) >= clearance.clearance_min]
    order = usable[np.argsort(np.linalg.norm(centres[usable] - location, axis=1), kind="stable")]
    a, b = ws.points[seg], ws.points[seg + 1]
    for idx in order:
        point = centres[idx]
        if g is None or (g.segment_is_free(a, point) and g.segment_is_free(point, b)):
            return int(idx), point
    return None


def refine_for_clearance(
    tr: PiecewiseTrajectory,
    legs: Sequence[GeometricPath],
    g: Optional[OccupancyGrid],
    limits: DynamicsLimits,
    clearance: ClearanceModel,
    max_rounds: int = MAX_CLEARANCE_REFINEMENTS,
) -> PiecewiseTrajectory:
    """
    Pull a solved trajectory back toward its grid path where it cuts close to a box.

    Each round looks at the dense samples of every segment. A segment whose
    samples fall below clearance_min (plus a small margin) gets the path cell
    nearest its worst sample inserted, and the tour is solved again.

    Args:
        tr: Retimed trajectory of one robot
        legs: Dense paths the waypoints were taken from
        g: Grid for chord checks
        limits: Dynamics limits
        clearance: Obstacle model
        max_rounds: Upper bound on re-solves

    Returns:
        The refined trajectory; unchanged when already clear or when no
        segment has a usable cell left
    """
    tour_length = float(sum(leg.cost for leg in legs))
    threshold = clearance.clearance_min + CLEARANCE_REFINE_MARGIN
    for _ in range(max_rounds):
        times = dense_sample_times(tr)
        positions = tr.evaluate(times)
        values = clearance.clearance(positions)
        if np.all(values >= threshold):
            break
        segments = np.clip(np.searchsorted(tr.knots, times, side="right") - 1, 0, tr.segment_count - 1)
        worst: Dict[int, int] = {}
        for k in np.nonzero(values < threshold)[0]:
            seg = int(segments[k])
            if seg not in worst or values[k] < values[worst[seg]]:
                worst[seg] = int(k)

        ws = tr.waypoints
        picks = []
        for seg, k in worst.items():
            found = _refinement_cell(ws, seg, legs, positions[k], g, clearance)
            if found is not None:
                picks.append((seg, found))
        if not picks:
            break
        for seg, (idx, point) in sorted(picks, key=lambda item: item[0], reverse=True):
            ws = ws.inserted(seg, point, idx)
        tr = timed_trajectory(ws, tour_length, limits, tr.t0)
    return tr


def tour_trajectory(
    ws: WaypointSequence,
    legs: Sequence[GeometricPath],
    g: Optional[OccupancyGrid],
    limits: DynamicsLimits,
    t0: float = 0.0,
    clearance: Optional[ClearanceModel] = None,
) -> PiecewiseTrajectory:
    """Timed trajectory through `ws`, refined for clearance when a model with boxes is given."""
    tr = timed_trajectory(ws, float(sum(leg.cost for leg in legs)), limits, t0)
    if clearance is None or not clearance.obstacles or not legs:
        return tr
    return refine_for_clearance(tr, legs, g, limits, clearance)


def tour_legs(robot: int, tour: Sequence[int], m: CostMatrices) -> List[GeometricPath]:
    """Outbound, transfer and return paths of a tour, oriented in travel direction."""
    stops: List[Optional[int]] = [None] + list(tour) + [None]
    legs = []
    for a, b in zip(stops, stops[1:]):
        path = m.leg_path(robot, a, b)
        if path is None:
            raise ValueError(f"tour of robot {robot} uses an unreachable leg {a} -> {b}")
        legs.append(path)
    return legs


def build_robot_tour(
    robot: int,
    tour: Sequence[int],
    fp: FilteredProblem,
    s: Scenario,
    g: Optional[OccupancyGrid],
    limits: DynamicsLimits,
    t0: float = 0.0,
) -> RobotTour:
    """
    Assemble legs, waypoints and trajectory for one robot of a plan.

    A robot without goals hovers at its start for one minimum-length segment.

    Args:
        robot: Robot index in the filtered problem
        tour: Filtered goal indices in visiting order
        fp: Filtered problem
        s: Scenario
        g: Grid for chord checks
        limits: Dynamics limits
        t0: Departure time

    Returns:
        RobotTour with a retimed trajectory
    """
    m = fp.matrices
    start = s.robot_starts[fp.active_robots[robot]].as_array()
    goal_points = np.array([s.goals[fp.active_goals[j]].as_list() for j in tour]).reshape(-1, 3)
    robot_id = m.robot_ids[robot] if m.robot_ids else str(robot)
    model = ClearanceModel.from_scenario(s)

    if not tour:
        ws = WaypointSequence.from_points([start, start])
        trajectory = solve_minsnap(ws, [MIN_SEGMENT_DURATION], t0)
        return RobotTour(robot, robot_id, start, (), goal_points, (), ws, trajectory, clearance=model)

    legs = tour_legs(robot, tour, m)
    ws = build_tour_waypoints(legs, start, goal_points, g, clearance=model)
    trajectory = tour_trajectory(ws, legs, g, limits, t0, model)
    goals = tuple(int(j) for j in tour)
    return RobotTour(robot, robot_id, start, goals, goal_points, tuple(legs), ws, trajectory, clearance=model)


def build_plan_tours(
    plan: Plan,
    fp: FilteredProblem,
    s: Scenario,
    g: Optional[OccupancyGrid],
    limits: DynamicsLimits,
) -> List[RobotTour]:
    """Tours for every robot of a plan, in robot order."""
    return [build_robot_tour(robot, tour, fp, s, g, limits) for robot, tour in enumerate(plan.tours)]


def rebuild_tour(
    rt: RobotTour,
    g: Optional[OccupancyGrid],
    limits: DynamicsLimits,
    legs: Optional[Sequence[GeometricPath]] = None,
    dense_legs: Optional[AbstractSet[int]] = None,
) -> RobotTour:
    """Re-derive waypoints and trajectory after a leg change, keeping the departure time."""
    legs = tuple(legs if legs is not None else rt.legs)
    dense = frozenset(dense_legs if dense_legs is not None else rt.dense_legs)
    ws = build_tour_waypoints(legs, rt.start, rt.goal_points, g, dense, rt.clearance)
    trajectory = tour_trajectory(ws, legs, g, limits, rt.trajectory.t0, rt.clearance)
    return replace(rt, legs=legs, waypoints=ws, trajectory=trajectory, dense_legs=dense)


def with_waypoints(
    rt: RobotTour, ws: WaypointSequence, limits: DynamicsLimits, g: Optional[OccupancyGrid] = None
) -> RobotTour:
    """Re-solve a tour through an edited waypoint sequence."""
    trajectory = tour_trajectory(ws, rt.legs, g, limits, rt.trajectory.t0, rt.clearance)
    return replace(rt, waypoints=ws, trajectory=trajectory)


def delayed(rt: RobotTour, delta: float) -> RobotTour:
    """Same trajectory departing `delta` seconds later."""
    return replace(rt, trajectory=rt.trajectory.time_shift(delta))


def mission_makespan(tours: Sequence[RobotTour]) -> float:
    """Latest return time over all robots."""
    return max((rt.trajectory.t_f for rt in tours if not rt.is_hover), default=0.0)
