"""
Minimum-snap piecewise polynomial trajectories.

Every segment is a degree-7 polynomial per axis written in local unit time
τ = (t - t_s) / T_s ∈ [0, 1]. Derivatives with respect to mission time pick
up a factor T_s^-r, and the snap integral of a segment is T_s^-7 times its
unit-time Gram form. One KKT system is assembled per robot and solved for the
three axes at once.
"""

import math
from dataclasses import dataclass, replace
from math import factorial
from typing import AbstractSet, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from drone_mission_planner.errors import MinSnapSolveError, RetimeInfeasibleError
from drone_mission_planner.grid import GeometricPath, OccupancyGrid
from drone_mission_planner.scenario import BoxObstacle, DynamicsLimits, Scenario, signed_box_distance

POLY_DEGREE = 7
NUM_COEFFS = POLY_DEGREE + 1
TIME_SAFETY_FACTOR = 1.2
MIN_SEGMENT_DURATION = 0.1
MAX_RETIME_ROUNDS = 5
SAMPLES_PER_SEGMENT = 32
SHORTCUT_CLEARANCE_MARGIN = 0.1


@dataclass(frozen=True, eq=False)
class WaypointSequence:
    """
    Ordered waypoints with per-point flags.

    `leg_index[k]` is the tour leg that ends at point k (0 for the first
    point) and `cell_index[k]` the index of the source cell inside that leg's
    dense path, or -1 for points that are not cell centres.
    """

    points: np.ndarray
    hold: Tuple[bool, ...]
    is_goal: Tuple[bool, ...]
    leg_index: Tuple[int, ...]
    cell_index: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise ValueError("a waypoint sequence needs at least 2 points")
        n = len(self.points)
        for name in ("hold", "is_goal", "leg_index", "cell_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries for {n} points")

    @property
    def closed(self) -> bool:
        return bool(np.allclose(self.points[0], self.points[-1], atol=1e-9))

    @property
    def segment_count(self) -> int:
        return len(self.points) - 1

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    @classmethod
    def from_points(cls, points: Sequence[Sequence[float]]) -> "WaypointSequence":
        pts = np.asarray(points, dtype=float)
        n = len(pts)
        return cls(pts, (False,) * n, (False,) * n, (0,) * n, (-1,) * n)

    def inserted(self, after: int, point: Sequence[float], cell_index: int = -1) -> "WaypointSequence":
        """Copy with `point` inserted between points `after` and `after + 1`."""
        pos = after + 1
        return WaypointSequence(
            np.insert(self.points, pos, np.asarray(point, dtype=float), axis=0),
            self.hold[:pos] + (False,) + self.hold[pos:],
            self.is_goal[:pos] + (False,) + self.is_goal[pos:],
            self.leg_index[:pos] + (self.leg_index[pos],) + self.leg_index[pos:],
            self.cell_index[:pos] + (cell_index,) + self.cell_index[pos:],
        )


@dataclass(frozen=True)
class SampledStates:
    """States evaluated on a uniform time grid."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def _basis(tau: np.ndarray, derivative: int) -> np.ndarray:
    """Rows of d^r/dτ^r [1, τ, ..., τ^7] for each τ."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    rows = np.zeros((len(tau), NUM_COEFFS))
    for k in range(derivative, NUM_COEFFS):
        rows[:, k] = factorial(k) / factorial(k - derivative) * tau ** (k - derivative)
    return rows


def _unit_snap_gram() -> np.ndarray:
    """∫₀¹ (d⁴p/dτ⁴)² dτ as a quadratic form in the 8 coefficients."""
    q = np.zeros((NUM_COEFFS, NUM_COEFFS))
    for i in range(4, NUM_COEFFS):
        for j in range(4, NUM_COEFFS):
            ci = factorial(i) / factorial(i - 4)
            cj = factorial(j) / factorial(j - 4)
            q[i, j] = ci * cj / (i + j - 7)
    return q


_UNIT_Q = _unit_snap_gram()


@dataclass(frozen=True, eq=False)
class PiecewiseTrajectory:
    """
    Solved trajectory: durations (n,), unit-time coefficients (n, 3, 8) and
    the mission-clock start time.
    """

    durations: np.ndarray
    coeffs: np.ndarray
    t0: float
    waypoints: WaypointSequence

    @property
    def segment_count(self) -> int:
        return len(self.durations)

    @property
    def duration(self) -> float:
        return float(np.sum(self.durations))

    @property
    def t_f(self) -> float:
        return self.t0 + self.duration

    @property
    def knots(self) -> np.ndarray:
        """Segment boundary times on the mission clock, length n + 1."""
        return self.t0 + np.concatenate(([0.0], np.cumsum(self.durations)))

    def evaluate(self, t, derivative: int = 0) -> np.ndarray:
        """
        Position or time derivative at mission time(s) `t`.

        Outside [t_0, t_f] the drone holds its first or last position, so
        derivatives there are zero.

        Returns:
            (3,) for scalar t, (m, 3) for an array of times
        """
        scalar = np.ndim(t) == 0
        times = np.atleast_1d(np.asarray(t, dtype=float))
        knots = self.knots
        clamped = np.clip(times, knots[0], knots[-1])
        seg = np.clip(np.searchsorted(knots, clamped, side="right") - 1, 0, self.segment_count - 1)
        durations = self.durations[seg]
        tau = np.clip((clamped - knots[seg]) / durations, 0.0, 1.0)
        rows = _basis(tau, derivative)
        values = np.einsum("mk,mak->ma", rows, self.coeffs[seg]) / durations[:, None] ** derivative
        if derivative > 0:
            outside = (times < knots[0]) | (times > knots[-1])
            values[outside] = 0.0
        return values[0] if scalar else values

    def snap_cost(self) -> float:
        """Σ over segments and axes of ∫ (d⁴p/dt⁴)² dt."""
        total = 0.0
        for seg in range(self.segment_count):
            scale = self.durations[seg] ** -7
            for axis in range(3):
                c = self.coeffs[seg, axis]
                total += scale * float(c @ _UNIT_Q @ c)
        return total

    def time_shift(self, delta: float) -> "PiecewiseTrajectory":
        """Same geometry started `delta` seconds later."""
        return replace(self, t0=self.t0 + delta)

    def junction_residuals(self) -> np.ndarray:
        """Max jump of position, velocity, acceleration and jerk across junctions, shape (4,)."""
        residuals = np.zeros(4)
        for seg in range(self.segment_count - 1):
            t_a, t_b = self.durations[seg], self.durations[seg + 1]
            for r in range(4):
                end = _basis(np.array([1.0]), r)[0] @ self.coeffs[seg].T / t_a**r
                start = _basis(np.array([0.0]), r)[0] @ self.coeffs[seg + 1].T / t_b**r
                residuals[r] = max(residuals[r], float(np.max(np.abs(end - start))))
        return residuals


def _chord_free(g: Optional[OccupancyGrid], a: np.ndarray, b: np.ndarray) -> bool:
    return g is None or g.segment_is_free(a, b)


def simplify_path(
    gp: GeometricPath,
    g: Optional[OccupancyGrid] = None,
    start: Optional[Sequence[float]] = None,
    end: Optional[Sequence[float]] = None,
) -> WaypointSequence:
    """
    Reduce a dense cell path to its direction-change corners.

    Endpoints are always kept; `start` and `end` replace the first and last
    cell centres with the exact entity positions. Each chord between kept
    points is checked against `g`; a failing chord gets its middle cell kept
    and both halves are checked again.

    Args:
        gp: Dense path from the grid search
        g: Grid used for chord checks (no check when None)
        start: Exact start position
        end: Exact end position

    Returns:
        Open WaypointSequence of at least 2 points
    """
    cells = np.asarray(gp.cells, dtype=int)
    centres = np.asarray(gp.waypoints, dtype=float)
    last = len(cells) - 1
    first_point = np.asarray(start, dtype=float) if start is not None else centres[0]
    last_point = np.asarray(end, dtype=float) if end is not None else centres[last]

    corners = [0]
    for idx in range(1, last):
        if not np.array_equal(cells[idx + 1] - cells[idx], cells[idx] - cells[idx - 1]):
            corners.append(idx)
    if last > 0:
        corners.append(last)

    # (cell index, point) entries; -1 marks an exact entity position
    def point_of(idx: int) -> Tuple[int, np.ndarray]:
        if idx == 0 and start is not None:
            return -1, first_point
        if idx == last and end is not None:
            return -1, last_point
        return idx, centres[idx]

    def refine(a: int, b: int, pa: Tuple[int, np.ndarray], pb: Tuple[int, np.ndarray]) -> List[Tuple[int, np.ndarray]]:
        if _chord_free(g, pa[1], pb[1]):
            return [pb]
        if b - a > 1:
            mid = (a + b) // 2
            pm = (mid, centres[mid])
            return refine(a, mid, pa, pm) + refine(mid, b, pm, pb)
        if pa[0] == -1 and a == 0:
            anchor = (0, centres[0])
            return [anchor] + refine(a, b, anchor, pb)
        if pb[0] == -1 and b == last:
            anchor = (last, centres[last])
            return refine(a, b, pa, anchor) + [pb]
        return [pb]

    kept = [point_of(0)]
    if last == 0:
        kept.append((-1 if end is not None else 0, last_point))
    for a, b in zip(corners, corners[1:]):
        kept.extend(refine(a, b, kept[-1], point_of(b)))

    points = np.array([p for _, p in kept])
    n = len(points)
    return WaypointSequence(
        points,
        (False,) * n,
        (False,) * n,
        (0,) * n,
        tuple(int(idx) if idx >= 0 else -1 for idx, _ in kept),
    )


@dataclass(frozen=True, eq=False)
class ClearanceModel:
    """Obstacle boxes and the clearance a trajectory has to keep from them."""

    obstacles: Tuple[BoxObstacle, ...]
    body_radius: float
    clearance_min: float
    margin: float = SHORTCUT_CLEARANCE_MARGIN

    @classmethod
    def from_scenario(cls, s: Scenario) -> "ClearanceModel":
        return cls(tuple(s.obstacles), s.safety_radius, s.clearance_margin)

    @property
    def target(self) -> float:
        """Clearance a shortcut chord should keep wherever its cells allow it."""
        return self.clearance_min + self.margin

    def clearance(self, points: np.ndarray) -> np.ndarray:
        """Surface distance to the nearest box minus the body radius, +inf without boxes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.obstacles:
            return np.full(len(pts), math.inf)
        distances = np.stack([signed_box_distance(pts, box) for box in self.obstacles])
        return np.min(distances, axis=0) - self.body_radius

    def chord_clearance(self, a: np.ndarray, b: np.ndarray, step: float) -> float:
        """Smallest clearance along the straight chord a-b, sampled every `step` meters."""
        samples = max(2, int(math.ceil(float(np.linalg.norm(b - a)) / step)) + 1)
        t = np.linspace(0.0, 1.0, samples)[:, None]
        return float(np.min(self.clearance(a + t * (b - a))))


def shortcut_path(
    gp: GeometricPath,
    g: Optional[OccupancyGrid],
    clearance: ClearanceModel,
    start: Optional[Sequence[float]] = None,
    end: Optional[Sequence[float]] = None,
) -> WaypointSequence:
    """
    Reduce a dense cell path by line of sight.

    From every kept point the chord is pulled forward along the path while it
    stays inside free cells and keeps at least min(target clearance, worst
    clearance of the cells and endpoints it spans). Diagonal staircases from
    26-connected searches collapse into single chords this way.

    Args:
        gp: Dense path from the grid search
        g: Grid used for chord checks (no check when None)
        clearance: Obstacle model for the clearance floor
        start: Exact start position
        end: Exact end position

    Returns:
        Open WaypointSequence with the same bookkeeping as simplify_path
    """
    cells = np.asarray(gp.cells, dtype=int)
    centres = np.asarray(gp.waypoints, dtype=float)
    last = len(cells) - 1
    if last == 0:
        return simplify_path(gp, g, start, end)
    first_point = np.asarray(start, dtype=float) if start is not None else centres[0]
    last_point = np.asarray(end, dtype=float) if end is not None else centres[last]
    cell_clearance = clearance.clearance(centres)
    step = 0.25 * g.resolution if g is not None else 0.1

    def point_of(idx: int) -> Tuple[int, np.ndarray]:
        if idx == 0 and start is not None:
            return -1, first_point
        if idx == last and end is not None:
            return -1, last_point
        return idx, centres[idx]

    def visible(anchor: np.ndarray, i: int, j: int) -> bool:
        target = point_of(j)[1]
        if not _chord_free(g, anchor, target):
            return False
        ends = clearance.clearance(np.array([anchor, target]))
        floor = min(clearance.target, float(np.min(cell_clearance[i : j + 1])), float(np.min(ends)))
        return clearance.chord_clearance(anchor, target, step) >= floor - 1e-9

    kept = [point_of(0)]
    i = 0
    while i < last:
        anchor = kept[-1][1]
        j = i + 1
        while j < last and visible(anchor, i, j + 1):
            j += 1
        if j == i + 1 and not visible(anchor, i, j):
            if i == 0 and start is not None and not _chord_free(g, anchor, point_of(j)[1]):
                kept.append((0, centres[0]))
            if j == last and end is not None and not _chord_free(g, kept[-1][1], last_point):
                kept.append((last, centres[last]))
        kept.append(point_of(j))
        i = j

    points = np.array([p for _, p in kept])
    n = len(points)
    return WaypointSequence(points, (False,) * n, (False,) * n, (0,) * n, tuple(idx for idx, _ in kept))


def dense_waypoints(gp: GeometricPath, start: Sequence[float], end: Sequence[float]) -> WaypointSequence:
    """Every interior cell centre of a path between exact end positions."""
    centres = np.asarray(gp.waypoints, dtype=float)
    interior = list(range(1, len(centres) - 1))
    points = [np.asarray(start, dtype=float)] + [centres[i] for i in interior] + [np.asarray(end, dtype=float)]
    n = len(points)
    return WaypointSequence(np.array(points), (False,) * n, (False,) * n, (0,) * n, (-1, *interior, -1))


def build_tour_waypoints(
    legs: Sequence[GeometricPath],
    start: Sequence[float],
    goal_points: Sequence[Sequence[float]],
    g: Optional[OccupancyGrid] = None,
    dense_legs: AbstractSet[int] = frozenset(),
    clearance: Optional[ClearanceModel] = None,
) -> WaypointSequence:
    """
    Closed waypoint sequence for one robot: start, goals in order, start.

    Legs are reduced to corners by simplify_path, or by line of sight with
    shortcut_path when a clearance model is given.

    Args:
        legs: len(goal_points) + 1 dense paths, oriented in travel direction
        start: Robot start position
        goal_points: Goal positions in tour order
        g: Grid for chord checks
        dense_legs: Legs that keep every cell centre instead of being simplified
        clearance: Obstacle model enabling line-of-sight shortcuts

    Returns:
        WaypointSequence whose first and last points are the start
    """
    if len(legs) != len(goal_points) + 1:
        raise ValueError(f"{len(goal_points)} goals need {len(goal_points) + 1} legs, got {len(legs)}")
    stops = [np.asarray(start, dtype=float)] + [np.asarray(p, dtype=float) for p in goal_points]
    stops.append(stops[0])

    points: List[np.ndarray] = [stops[0]]
    is_goal: List[bool] = [False]
    leg_index: List[int] = [0]
    cell_index: List[int] = [-1]
    for leg_no, leg in enumerate(legs):
        if leg_no in dense_legs:
            sub = dense_waypoints(leg, stops[leg_no], stops[leg_no + 1])
        elif clearance is not None:
            sub = shortcut_path(leg, g, clearance, stops[leg_no], stops[leg_no + 1])
        else:
            sub = simplify_path(leg, g, stops[leg_no], stops[leg_no + 1])
        for offset in range(1, len(sub.points)):
            points.append(sub.points[offset])
            is_goal.append(offset == len(sub.points) - 1 and leg_no < len(goal_points))
            leg_index.append(leg_no)
            cell_index.append(sub.cell_index[offset])

    n = len(points)
    return WaypointSequence(np.array(points), (False,) * n, tuple(is_goal), tuple(leg_index), tuple(cell_index))


def allocate_times(
    ws: WaypointSequence,
    limits: DynamicsLimits,
    kappa: float = TIME_SAFETY_FACTOR,
    min_duration: float = MIN_SEGMENT_DURATION,
) -> np.ndarray:
    """
    Segment durations T = κ·max(d / v_max, sqrt(2d / a_max)).

    Zero-length segments get `min_duration`.
    """
    lengths = ws.segment_lengths()
    durations = np.empty_like(lengths)
    for idx, d in enumerate(lengths):
        if d <= 1e-12:
            durations[idx] = min_duration
        else:
            t = max(d / limits.v_max_drone, math.sqrt(2.0 * d / limits.a_max_drone)) * kappa
            durations[idx] = max(t, min_duration)
    return durations


def minsnap_system(points: np.ndarray, durations: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Equality-constrained QP of one trajectory.

    Variables are the unit-time coefficients of every segment, shared by the
    three axes. Constraints: positions at both ends of every segment, rest at
    the start and end (velocity and acceleration), and velocity, acceleration
    and jerk continuity at interior junctions.

    Returns:
        Q (8n, 8n), A (5n + 1, 8n) and B (5n + 1, 3) with the objective
        Σ_axis x_axisᵀ Q x_axis subject to A x_axis = B[:, axis]
    """
    points = np.asarray(points, dtype=float)
    durations = np.asarray(durations, dtype=float)
    n = len(durations)
    if n < 1 or len(points) != n + 1:
        raise ValueError(f"{len(points)} waypoints do not match {n} segment durations")
    size = NUM_COEFFS * n

    q = np.zeros((size, size))
    for seg, t in enumerate(durations):
        block = slice(seg * NUM_COEFFS, (seg + 1) * NUM_COEFFS)
        q[block, block] = _UNIT_Q * t**-7

    at0 = [_basis(np.array([0.0]), r)[0] for r in range(4)]
    at1 = [_basis(np.array([1.0]), r)[0] for r in range(4)]
    rows: List[np.ndarray] = []
    rhs: List[np.ndarray] = []
    zero = np.zeros(3)

    def add(entries: Sequence[Tuple[int, np.ndarray]], value: np.ndarray) -> None:
        row = np.zeros(size)
        for seg, coeffs in entries:
            row[seg * NUM_COEFFS : (seg + 1) * NUM_COEFFS] += coeffs
        scale = np.max(np.abs(row))
        rows.append(row / scale)
        rhs.append(value / scale)

    for seg in range(n):
        add([(seg, at0[0])], points[seg])
        add([(seg, at1[0])], points[seg + 1])
    for r in (1, 2):
        add([(0, at0[r] / durations[0] ** r)], zero)
        add([(n - 1, at1[r] / durations[-1] ** r)], zero)
    for seg in range(n - 1):
        for r in (1, 2, 3):
            add([(seg, at1[r] / durations[seg] ** r), (seg + 1, -at0[r] / durations[seg + 1] ** r)], zero)

    return q, np.array(rows), np.array(rhs)


def solve_minsnap(ws: WaypointSequence, durations: Sequence[float], t0: float = 0.0) -> PiecewiseTrajectory:
    """
    Solve the minimum-snap QP through its KKT system.

    Args:
        ws: Waypoints, one more than the number of durations
        durations: Positive segment durations in seconds
        t0: Mission-clock start time

    Returns:
        PiecewiseTrajectory through every waypoint, at rest at both ends

    Raises:
        ValueError: If a duration is not positive
        MinSnapSolveError: If the KKT matrix is singular or badly conditioned
    """
    durations = np.asarray(durations, dtype=float)
    if np.any(~np.isfinite(durations)) or np.any(durations <= 0.0):
        raise ValueError("segment durations must be finite and positive")
    q, a, b = minsnap_system(ws.points, durations)
    size, n_rows = q.shape[0], a.shape[0]

    # Objective scale does not move the minimiser.
    q_scaled = q / np.max(np.abs(q))
    kkt = np.zeros((size + n_rows, size + n_rows))
    kkt[:size, :size] = 2.0 * q_scaled
    kkt[:size, size:] = a.T
    kkt[size:, :size] = a
    rhs = np.zeros((size + n_rows, 3))
    rhs[size:] = b

    n_seg = len(durations)
    try:
        solution = scipy.linalg.solve(kkt, rhs, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise MinSnapSolveError(n_seg, float(np.linalg.cond(kkt)), str(exc)) from exc
    if not np.all(np.isfinite(solution)):
        raise MinSnapSolveError(n_seg, float(np.linalg.cond(kkt)), "non-finite solution")
    residual = float(np.max(np.abs(a @ solution[:size] - b)))
    if residual > 1e-6 * max(1.0, float(np.max(np.abs(b)))):
        raise MinSnapSolveError(n_seg, float(np.linalg.cond(kkt)), f"constraint residual {residual:.3e}")

    coeffs = solution[:size].T.reshape(3, n_seg, NUM_COEFFS).transpose(1, 0, 2)
    return PiecewiseTrajectory(durations.copy(), np.ascontiguousarray(coeffs), float(t0), ws)


def sample(tr: PiecewiseTrajectory, dt: float) -> SampledStates:
    """Positions, velocities and accelerations every `dt` seconds from t_0, t_f included."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    steps = int(math.floor(tr.duration / dt + 1e-9))
    times = tr.t0 + dt * np.arange(steps + 1)
    if times[-1] < tr.t_f - 1e-9:
        times = np.append(times, tr.t_f)
    return SampledStates(times, tr.evaluate(times, 0), tr.evaluate(times, 1), tr.evaluate(times, 2))


def dense_sample_times(tr: PiecewiseTrajectory, per_segment: int = SAMPLES_PER_SEGMENT) -> np.ndarray:
    """Times spaced evenly inside every segment, junctions included."""
    knots = tr.knots
    chunks = [np.linspace(knots[s], knots[s + 1], per_segment + 1) for s in range(tr.segment_count)]
    return np.unique(np.concatenate(chunks))


def peak_speed_and_acceleration(tr: PiecewiseTrajectory) -> Tuple[float, float]:
    times = dense_sample_times(tr)
    speed = float(np.max(np.linalg.norm(tr.evaluate(times, 1), axis=1)))
    accel = float(np.max(np.linalg.norm(tr.evaluate(times, 2), axis=1)))
    return speed, accel


def retime(tr: PiecewiseTrajectory, limits: DynamicsLimits, max_rounds: int = MAX_RETIME_ROUNDS) -> PiecewiseTrajectory:
    """
    Stretch all durations uniformly until speed and acceleration limits hold.

    Speed scales as 1/λ and acceleration as 1/λ², so each round uses
    λ = max(v_peak / v_max, sqrt(a_peak / a_max)) with a small margin.

    Raises:
        RetimeInfeasibleError: If limits still fail after `max_rounds` rounds
    """
    current = tr
    for _ in range(max_rounds):
        speed, accel = peak_speed_and_acceleration(current)
        v_ratio = speed / limits.v_max_drone
        a_ratio = accel / limits.a_max_drone
        if v_ratio <= 1.0 + 1e-9 and a_ratio <= 1.0 + 1e-9:
            return current
        factor = max(v_ratio, math.sqrt(a_ratio), 1.0) * (1.0 + 1e-3)
        current = solve_minsnap(current.waypoints, current.durations * factor, current.t0)
    speed, accel = peak_speed_and_acceleration(current)
    if speed <= limits.v_max_drone * (1.0 + 1e-9) and accel <= limits.a_max_drone * (1.0 + 1e-9):
        return current
    raise RetimeInfeasibleError(
        f"speed {speed:.3f} m/s or acceleration {accel:.3f} m/s² still above limits "
        f"after {max_rounds} retime rounds"
    )
