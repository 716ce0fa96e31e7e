"""
Separation and clearance checks on sampled trajectories, plus local replanning.

Checks run on one shared time grid; robots that have finished (or not yet
departed) hold their start position. Replanning escalates by round:
departure delay, then waypoint insertion, then rerouting the offending leg.
Lower robot index means higher priority.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from drone_mission_planner.cost_matrices import FilteredProblem
from drone_mission_planner.errors import ReplanFailure
from drone_mission_planner.grid import CellIndex, OccupancyGrid, shortest_path
from drone_mission_planner.minsnap import PiecewiseTrajectory, SampledStates
from drone_mission_planner.run_log import null_log
from drone_mission_planner.scenario import BoxObstacle, DynamicsLimits, Scenario, signed_box_distance
from drone_mission_planner.tours import RobotTour, delayed, rebuild_tour, with_waypoints

DEFAULT_CHECK_DT = 0.05
DEFAULT_MAX_REPLAN_ROUNDS = 10

SEPARATION = "separation"
CLEARANCE = "clearance"

STRATEGY_TIMING = "timing"
STRATEGY_INSERT = "insert"
STRATEGY_REROUTE = "reroute"


@dataclass(frozen=True)
class SafetyConfig:
    """Thresholds and loop limits for trajectory validation."""

    separation_min: float
    clearance_min: float
    safety_radius: float
    check_dt: float = DEFAULT_CHECK_DT
    max_replan_rounds: int = DEFAULT_MAX_REPLAN_ROUNDS

    def __post_init__(self) -> None:
        if self.check_dt <= 0.0:
            raise ValueError("check_dt must be positive")
        if self.max_replan_rounds < 1:
            raise ValueError("max_replan_rounds must be >= 1")
        if self.separation_min <= 2.0 * self.safety_radius:
            raise ValueError("separation_min must exceed twice the safety radius")

    @classmethod
    def from_scenario(
        cls,
        s: Scenario,
        check_dt: float = DEFAULT_CHECK_DT,
        max_replan_rounds: int = DEFAULT_MAX_REPLAN_ROUNDS,
    ) -> "SafetyConfig":
        return cls(s.separation_min, s.clearance_margin, s.safety_radius, check_dt, max_replan_rounds)


@dataclass(frozen=True, eq=False)
class Violation:
    """A separation or clearance breach at one sample time."""

    kind: str
    time: float
    robots: Tuple[int, ...]
    distance: float
    location: np.ndarray
    obstacle: Optional[int] = None


@dataclass(eq=False)
class SafetyReport:
    """Metric time series from the last check plus the replanning record."""

    times: np.ndarray
    min_separation: np.ndarray
    min_clearance: np.ndarray
    violations: List[Violation]
    rounds_used: int
    final_ok: bool
    rounds: List[Dict[str, object]] = field(default_factory=list)

    @property
    def overall_min_separation(self) -> float:
        return float(np.min(self.min_separation)) if len(self.min_separation) else math.inf

    @property
    def overall_min_clearance(self) -> float:
        return float(np.min(self.min_clearance)) if len(self.min_clearance) else math.inf


@dataclass(eq=False)
class ReplanContext:
    """Everything a replanning strategy may need."""

    fp: FilteredProblem
    scenario: Scenario
    grid: OccupancyGrid
    limits: DynamicsLimits
    cfg: SafetyConfig
    log: Callable[[str], None] = null_log


def shared_time_grid(trajs: Sequence[PiecewiseTrajectory], dt: float) -> np.ndarray:
    """Uniform grid from the earliest start to the latest finish, end included."""
    t_start = min(tr.t0 for tr in trajs)
    t_end = max(tr.t_f for tr in trajs)
    steps = int(math.floor((t_end - t_start) / dt + 1e-9))
    times = t_start + dt * np.arange(steps + 1)
    if times[-1] < t_end - 1e-9:
        times = np.append(times, t_end)
    return times


def sample_on_grid(tr: PiecewiseTrajectory, times: np.ndarray) -> SampledStates:
    """States on a given grid, holding position outside [t_0, t_f]."""
    return SampledStates(times, tr.evaluate(times, 0), tr.evaluate(times, 1), tr.evaluate(times, 2))


def positions_on_grid(trajs: Sequence[PiecewiseTrajectory], times: np.ndarray) -> np.ndarray:
    """Positions of every robot, shape (R, m, 3)."""
    return np.stack([tr.evaluate(times, 0) for tr in trajs])


def check_separation(
    states: Sequence[SampledStates], cfg: SafetyConfig
) -> Tuple[List[Violation], np.ndarray]:
    """
    Pairwise distances on a shared grid.

    Args:
        states: Per-robot samples on the same time grid
        cfg: Thresholds

    Returns:
        Every (time, pair) closer than separation_min, and the minimum
        pairwise distance per sample (+inf with fewer than two robots)
    """
    if not states:
        return [], np.zeros(0)
    times = states[0].times
    min_series = np.full(len(times), math.inf)
    violations: List[Violation] = []
    for i, j in combinations(range(len(states)), 2):
        delta = states[i].positions - states[j].positions
        dist = np.linalg.norm(delta, axis=1)
        min_series = np.minimum(min_series, dist)
        for k in np.nonzero(dist < cfg.separation_min)[0]:
            midpoint = 0.5 * (states[i].positions[k] + states[j].positions[k])
            violations.append(Violation(SEPARATION, float(times[k]), (i, j), float(dist[k]), midpoint))
    violations.sort(key=lambda v: (v.time, v.robots))
    return violations, min_series


def clearance_series(
    positions: np.ndarray, obstacles: Sequence[BoxObstacle], safety_radius: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Clearance per point (surface distance minus body radius) and the nearest obstacle index."""
    if not obstacles:
        return np.full(len(positions), math.inf), np.full(len(positions), -1)
    distances = np.stack([signed_box_distance(positions, box) for box in obstacles])
    nearest = np.argmin(distances, axis=0)
    return distances[nearest, np.arange(len(positions))] - safety_radius, nearest


def check_clearance(
    states: SampledStates,
    obstacles: Sequence[BoxObstacle],
    cfg: SafetyConfig,
    robot: int = 0,
) -> Tuple[List[Violation], np.ndarray]:
    """
    Obstacle clearance of one robot's samples.

    Returns:
        Violations where clearance < clearance_min, and the clearance series
    """
    clearance, nearest = clearance_series(states.positions, obstacles, cfg.safety_radius)
    violations = [
        Violation(
            CLEARANCE,
            float(states.times[k]),
            (robot,),
            float(clearance[k]),
            states.positions[k].copy(),
            int(nearest[k]),
        )
        for k in np.nonzero(clearance < cfg.clearance_min)[0]
    ]
    return violations, clearance


def check_all(
    tours: Sequence[RobotTour], obstacles: Sequence[BoxObstacle], cfg: SafetyConfig, dt: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[Violation]]:
    """Run both checks on a shared grid; returns times, min separation, min clearance, violations."""
    trajs = [rt.trajectory for rt in tours]
    times = shared_time_grid(trajs, dt or cfg.check_dt)
    states = [sample_on_grid(tr, times) for tr in trajs]
    violations, min_sep = check_separation(states, cfg)
    min_clear = np.full(len(times), math.inf)
    for robot, st in enumerate(states):
        found, series = check_clearance(st, obstacles, cfg, robot)
        violations.extend(found)
        min_clear = np.minimum(min_clear, series)
    violations.sort(key=lambda v: (v.time, v.kind, v.robots))
    return times, min_sep, min_clear, violations


def _segment_at(tr: PiecewiseTrajectory, t: float) -> int:
    knots = tr.knots
    return int(np.clip(np.searchsorted(knots, t, side="right") - 1, 0, tr.segment_count - 1))


def _lateral(direction: np.ndarray, away: np.ndarray) -> np.ndarray:
    """Unit vector from `away` with its component along `direction` removed."""
    norm_dir = np.linalg.norm(direction)
    axis = direction / norm_dir if norm_dir > 1e-12 else np.zeros(3)
    lateral = away - np.dot(away, axis) * axis
    if np.linalg.norm(lateral) < 1e-9:
        helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        lateral = np.cross(axis if norm_dir > 1e-12 else np.array([1.0, 0.0, 0.0]), helper)
    return lateral / np.linalg.norm(lateral)


def _try_insert(rt: RobotTour, seg: int, candidates: Sequence[np.ndarray], ctx: ReplanContext) -> Optional[RobotTour]:
    ws = rt.waypoints
    a, b = ws.points[seg], ws.points[seg + 1]
    for point in candidates:
        try:
            cell = ctx.grid.world_to_cell(point)
        except ValueError:
            continue
        if ctx.grid.is_blocked(cell):
            continue
        if ctx.grid.segment_is_free(a, point) and ctx.grid.segment_is_free(point, b):
            return with_waypoints(rt, ws.inserted(seg, point), ctx.limits, ctx.grid)
    return None


def _detour_candidates(origin: np.ndarray, direction: np.ndarray, distance: float, ctx: ReplanContext) -> List[np.ndarray]:
    """Detour points on both sides, snapped to free cell centres."""
    out = []
    for sign in (1.0, -1.0):
        target = origin + sign * distance * direction
        cell = ctx.grid.nearest_free_cell(target)
        if cell is not None:
            out.append(ctx.grid.cell_to_world(cell))
    return out


def insert_for_separation(rt: RobotTour, other: PiecewiseTrajectory, v: Violation, ctx: ReplanContext) -> RobotTour:
    """
    Add a lateral detour waypoint at separation_min from the conflict point.

    Raises:
        ReplanFailure: If no free detour cell keeps both chords collision-free
    """
    tr = rt.trajectory
    seg = _segment_at(tr, v.time)
    own = tr.evaluate(v.time)
    direction = rt.waypoints.points[seg + 1] - rt.waypoints.points[seg]
    away = own - other.evaluate(v.time)
    lateral = _lateral(direction, away)
    updated = _try_insert(rt, seg, _detour_candidates(own, lateral, ctx.cfg.separation_min, ctx), ctx)
    if updated is None:
        raise ReplanFailure(f"no free detour cell for robot {rt.robot_id} at t={v.time:.2f} s", v)
    return updated


def insert_for_clearance(rt: RobotTour, v: Violation, ctx: ReplanContext) -> RobotTour:
    """
    Pull the curve back onto its grid path near a clearance breach.

    The dense path cell nearest the violation with acceptable clearance is
    inserted; failing that, a point pushed away from the nearest obstacle.

    Raises:
        ReplanFailure: If neither kind of point can be inserted
    """
    tr = rt.trajectory
    seg = _segment_at(tr, v.time)
    ws = rt.waypoints
    candidates: List[np.ndarray] = []
    if rt.legs:
        leg = rt.legs[ws.leg_index[seg + 1]]
        centres = np.asarray(leg.waypoints)
        clearance, _ = clearance_series(centres, ctx.scenario.obstacles, ctx.cfg.safety_radius)
        existing = {tuple(np.round(p, 9)) for p in ws.points}
        order = np.argsort(np.linalg.norm(centres - v.location, axis=1), kind="stable")
        for idx in order:
            if clearance[idx] >= ctx.cfg.clearance_min and tuple(np.round(centres[idx], 9)) not in existing:
                candidates.append(centres[idx])
    if v.obstacle is not None and v.obstacle >= 0:
        box = ctx.scenario.obstacles[v.obstacle]
        closest = np.clip(v.location, box.min_corner.as_array(), box.max_corner.as_array())
        away = v.location - closest
        norm = np.linalg.norm(away)
        if norm > 1e-9:
            reach = ctx.cfg.safety_radius + ctx.cfg.clearance_min + 0.5 * ctx.grid.resolution
            candidates.append(closest + away / norm * reach)
    updated = _try_insert(rt, seg, candidates, ctx)
    if updated is None:
        raise ReplanFailure(f"no clearance waypoint for robot {rt.robot_id} at t={v.time:.2f} s", v)
    return updated


def conflict_cells(g: OccupancyGrid, center: np.ndarray, radius: float) -> List[CellIndex]:
    """Cells whose centres lie within `radius` of a point."""
    r = int(math.ceil(radius / g.resolution))
    try:
        c = g.world_to_cell(np.clip(center, g.origin.as_array(), g.extent_max))
    except ValueError:
        return []
    cells = []
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            for dk in range(-r, r + 1):
                cell = CellIndex(c.i + di, c.j + dj, c.k + dk)
                if g.in_grid(cell) and np.linalg.norm(g.cell_to_world(cell) - center) <= radius + 1e-9:
                    cells.append(cell)
    return cells


def reroute_leg(rt: RobotTour, v: Violation, region_center: np.ndarray, radius: float, ctx: ReplanContext) -> Optional[RobotTour]:
    """
    Search the violating leg again with the conflict region blocked.

    Returns:
        Updated tour, or None when the region seals the leg
    """
    if not rt.legs:
        return None
    seg = _segment_at(rt.trajectory, v.time)
    leg_no = rt.waypoints.leg_index[seg + 1]
    leg = rt.legs[leg_no]
    endpoints = {leg.cells[0], leg.cells[-1]}
    region = [c for c in conflict_cells(ctx.grid, region_center, radius) if c not in endpoints]
    if not region:
        return None
    blocked = ctx.grid.with_blocked(region)
    path = shortest_path(blocked, leg.cells[0], leg.cells[-1], ctx.scenario.connectivity)
    if path is None:
        return None
    legs = list(rt.legs)
    legs[leg_no] = path
    return rebuild_tour(rt, ctx.grid, ctx.limits, legs=legs)


def strategy_for(kind: str, round_no: int) -> str:
    """Escalation ladder; clearance breaches have no timing fix."""
    if round_no >= 3:
        return STRATEGY_REROUTE
    if kind == SEPARATION and round_no == 1:
        return STRATEGY_TIMING
    return STRATEGY_INSERT


def _pick_targets(violations: Sequence[Violation]) -> List[Violation]:
    """Earliest violation per robot pair or per robot, each robot touched at most once."""
    seen_keys = set()
    touched = set()
    targets = []
    for v in violations:
        key = (v.kind, v.robots)
        if key in seen_keys:
            continue
        seen_keys.add(key)
        mover = max(v.robots)
        if mover in touched:
            continue
        touched.add(mover)
        targets.append(v)
    return targets


def _apply_strategy(
    updated: List[RobotTour], v: Violation, strategy: str, ctx: ReplanContext, delay: float
) -> Tuple[RobotTour, str]:
    """
    One fix for one target; returns the new tour of the mover and the action taken.

    Raises:
        ReplanFailure: If the strategy has nothing to offer for this violation
    """
    mover = max(v.robots)
    rt = updated[mover]
    if strategy == STRATEGY_TIMING:
        return delayed(rt, delay), f"delay robot {rt.robot_id} by {delay:.3f} s"
    if strategy == STRATEGY_INSERT:
        if v.kind == SEPARATION:
            fixed = insert_for_separation(rt, updated[min(v.robots)].trajectory, v, ctx)
        else:
            fixed = insert_for_clearance(rt, v, ctx)
        return fixed, f"insert waypoint for robot {rt.robot_id} at t={v.time:.2f} s"

    if v.kind == SEPARATION:
        center = updated[min(v.robots)].trajectory.evaluate(v.time)
        rerouted = reroute_leg(rt, v, center, ctx.cfg.separation_min, ctx)
    else:
        radius = ctx.cfg.safety_radius + ctx.cfg.clearance_min
        rerouted = reroute_leg(rt, v, v.location, radius, ctx)
    if rerouted is not None:
        return rerouted, f"reroute leg of robot {rt.robot_id} at t={v.time:.2f} s"
    if v.kind == SEPARATION:
        return delayed(rt, delay), f"reroute failed, delay robot {rt.robot_id} by {delay:.3f} s"
    if not rt.legs:
        raise ReplanFailure(f"no reroute for robot {rt.robot_id} at t={v.time:.2f} s", v)
    leg_no = rt.waypoints.leg_index[_segment_at(rt.trajectory, v.time) + 1]
    if leg_no in rt.dense_legs:
        raise ReplanFailure(f"no reroute for robot {rt.robot_id} at t={v.time:.2f} s", v)
    dense = set(rt.dense_legs) | {leg_no}
    action = f"follow dense path on leg {leg_no} of robot {rt.robot_id}"
    return rebuild_tour(rt, ctx.grid, ctx.limits, dense_legs=dense), action


def replan(
    tours: Sequence[RobotTour],
    violations: Sequence[Violation],
    ctx: ReplanContext,
    round_no: int,
) -> Tuple[List[RobotTour], List[str]]:
    """
    Apply one round of local fixes.

    Targets are fixed independently. A target whose strategy fails escalates
    to rerouting within the same round; if that fails too, its tour is left
    unchanged and the failure is reported as an action. Fixes already made to
    other robots are kept.

    Args:
        tours: Current per-robot tours
        violations: Violations from the last check, time-ordered
        ctx: Replanning context
        round_no: 1-based round number selecting the strategy

    Returns:
        Updated tours and a description of every action taken
    """
    updated = list(tours)
    actions: List[str] = []
    delay = ctx.cfg.separation_min / ctx.limits.v_max_drone
    for v in _pick_targets(violations):
        mover = max(v.robots)
        strategy = strategy_for(v.kind, round_no)
        ladder = [strategy] if strategy == STRATEGY_REROUTE else [strategy, STRATEGY_REROUTE]
        for step in ladder:
            try:
                updated[mover], action = _apply_strategy(updated, v, step, ctx, delay)
            except ReplanFailure as exc:
                actions.append(f"failed: {exc}")
                ctx.log(f"Replan round {round_no}: {exc}")
                continue
            actions.append(action)
            break
    return updated, actions


def validate_loop(
    tours: Sequence[RobotTour],
    ctx: ReplanContext,
) -> Tuple[List[RobotTour], SafetyReport]:
    """
    Check, replan and re-check until clean or out of rounds.

    Args:
        tours: Solved tours for every robot
        ctx: Replanning context

    Returns:
        Final tours and the SafetyReport of the last check
    """
    cfg = ctx.cfg
    current = list(tours)
    record: List[Dict[str, object]] = []
    round_no = 0
    while True:
        times, min_sep, min_clear, violations = check_all(current, ctx.scenario.obstacles, cfg)
        if not violations:
            ctx.log(f"Safety check clean after {round_no} replan rounds")
            return current, SafetyReport(times, min_sep, min_clear, [], round_no, True, record)
        if round_no >= cfg.max_replan_rounds:
            ctx.log(f"Safety check failed: {len(violations)} violations after {round_no} rounds")
            return current, SafetyReport(times, min_sep, min_clear, violations, round_no, False, record)

        round_no += 1
        n_sep = sum(1 for v in violations if v.kind == SEPARATION)
        entry: Dict[str, object] = {
            "round": round_no,
            "separation_violations": n_sep,
            "clearance_violations": len(violations) - n_sep,
        }
        current, actions = replan(current, violations, ctx, round_no)
        entry["actions"] = actions
        record.append(entry)
        ctx.log(
            f"Replan round {round_no}: {entry['separation_violations']} separation, "
            f"{entry['clearance_violations']} clearance violations; " + "; ".join(entry["actions"])
        )
