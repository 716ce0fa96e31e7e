"""
Unit tests for minimum-snap trajectory generation and retiming.
"""

from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg

from drone_mission_planner.errors import RetimeInfeasibleError
from drone_mission_planner.grid import shortest_path
from drone_mission_planner.minsnap import (
    ClearanceModel,
    MIN_SEGMENT_DURATION,
    WaypointSequence,
    allocate_times,
    build_tour_waypoints,
    minsnap_system,
    peak_speed_and_acceleration,
    retime,
    sample,
    shortcut_path,
    simplify_path,
    solve_minsnap,
)
from drone_mission_planner.scenario import BoxObstacle, DynamicsLimits, Vec3

POINTS = np.array(
    [
        [0.0, 0.0, 1.0],
        [3.0, 1.0, 1.5],
        [5.0, 4.0, 2.0],
        [2.0, 6.0, 1.0],
        [0.0, 0.0, 1.0],
    ]
)


def _solved(points=POINTS, limits=DynamicsLimits(1.0, 2.0)):
    ws = WaypointSequence.from_points(points)
    return solve_minsnap(ws, allocate_times(ws, limits))


def test_allocation_for_five_meter_segment(limits) -> None:
    ws = WaypointSequence.from_points([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    assert allocate_times(ws, limits) == pytest.approx([6.0])


def test_allocation_uses_acceleration_bound_on_short_segments() -> None:
    ws = WaypointSequence.from_points([[0.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])
    durations = allocate_times(ws, DynamicsLimits(1.0, 0.25))
    assert durations[0] == pytest.approx(1.2 * 2.0)
    assert durations[1] == MIN_SEGMENT_DURATION


def test_rest_to_rest_segment_is_symmetric() -> None:
    ws = WaypointSequence.from_points([[0.0, 0.0, 0.0], [4.0, 2.0, 0.0]])
    tr = solve_minsnap(ws, [3.0])
    assert tr.evaluate(1.5) == pytest.approx([2.0, 1.0, 0.0], abs=1e-7)
    assert tr.evaluate(0.75) + tr.evaluate(2.25) == pytest.approx([4.0, 2.0, 0.0], abs=1e-7)


def test_trajectory_passes_waypoints_and_rests_at_ends() -> None:
    tr = _solved()
    assert tr.evaluate(tr.knots) == pytest.approx(POINTS, abs=1e-6)
    for t in (tr.t0, tr.t_f):
        assert tr.evaluate(t, 1) == pytest.approx(np.zeros(3), abs=1e-6)
        assert tr.evaluate(t, 2) == pytest.approx(np.zeros(3), abs=1e-6)


def test_junctions_are_continuous_through_jerk() -> None:
    residuals = _solved().junction_residuals()
    assert residuals[0] < 1e-6
    assert residuals[1] < 1e-6
    assert residuals[2] < 1e-5
    assert residuals[3] < 1e-4


def test_derivatives_match_finite_differences() -> None:
    tr = _solved()
    h = 1e-5
    for t in np.linspace(tr.t0 + 0.3, tr.t_f - 0.3, 7):
        velocity = (tr.evaluate(t + h) - tr.evaluate(t - h)) / (2 * h)
        acceleration = (tr.evaluate(t + h, 1) - tr.evaluate(t - h, 1)) / (2 * h)
        assert tr.evaluate(t, 1) == pytest.approx(velocity, abs=1e-5)
        assert tr.evaluate(t, 2) == pytest.approx(acceleration, abs=1e-4)


def test_hold_outside_time_range() -> None:
    tr = _solved().time_shift(2.0)
    assert tr.evaluate(0.5) == pytest.approx(POINTS[0])
    assert tr.evaluate(tr.t_f + 4.0) == pytest.approx(POINTS[-1])
    assert np.all(tr.evaluate(np.array([0.5, tr.t_f + 4.0]), 1) == 0.0)


def test_snap_cost_scales_with_inverse_seventh_power() -> None:
    ws = WaypointSequence.from_points(POINTS)
    durations = allocate_times(ws, DynamicsLimits(1.0, 2.0))
    base = solve_minsnap(ws, durations)
    stretched = solve_minsnap(ws, durations * 2.0)

    assert stretched.coeffs == pytest.approx(base.coeffs, rel=1e-6, abs=1e-8)
    assert stretched.snap_cost() == pytest.approx(base.snap_cost() * 2.0**-7, rel=1e-6)


def test_solution_is_constrained_minimum() -> None:
    ws = WaypointSequence.from_points(POINTS)
    durations = allocate_times(ws, DynamicsLimits(1.0, 2.0))
    tr = solve_minsnap(ws, durations)
    q, a, b = minsnap_system(ws.points, durations)
    x = tr.coeffs[:, 0, :].reshape(-1)

    assert a @ x == pytest.approx(b[:, 0], abs=1e-7)
    null = scipy.linalg.null_space(a)
    rng = np.random.default_rng(0)
    best = float(x @ q @ x)
    for _ in range(10):
        step = null @ rng.normal(size=null.shape[1])
        step *= 1e-3 * np.linalg.norm(x) / np.linalg.norm(step)
        assert float((x + step) @ q @ (x + step)) >= best * (1.0 - 1e-9)


def test_constraint_count() -> None:
    q, a, b = minsnap_system(POINTS, np.ones(4))
    assert q.shape == (32, 32)
    assert a.shape == (21, 32)
    assert b.shape == (21, 3)


def test_rejects_bad_durations() -> None:
    ws = WaypointSequence.from_points(POINTS[:2])
    with pytest.raises(ValueError):
        solve_minsnap(ws, [0.0])
    with pytest.raises(ValueError):
        minsnap_system(POINTS, np.ones(2))


def test_retime_enforces_limits() -> None:
    limits = DynamicsLimits(1.0, 2.0)
    ws = WaypointSequence.from_points(POINTS)
    rushed = solve_minsnap(ws, np.full(4, 0.5))
    speed, accel = peak_speed_and_acceleration(rushed)
    assert speed > limits.v_max_drone

    fixed = retime(rushed, limits)
    speed, accel = peak_speed_and_acceleration(fixed)
    assert speed <= limits.v_max_drone * (1.0 + 1e-9)
    assert accel <= limits.a_max_drone * (1.0 + 1e-9)
    assert fixed.durations / rushed.durations == pytest.approx(
        np.full(4, fixed.durations[0] / rushed.durations[0])
    )


def test_retime_leaves_feasible_trajectory_alone() -> None:
    limits = DynamicsLimits(1.0, 2.0)
    rushed = solve_minsnap(WaypointSequence.from_points(POINTS), np.full(4, 0.5))
    fixed = retime(rushed, limits)
    assert retime(fixed, limits) is fixed


def test_retime_gives_up_after_round_limit() -> None:
    ws = WaypointSequence.from_points(POINTS)
    rushed = solve_minsnap(ws, np.full(4, 0.5))
    with pytest.raises(RetimeInfeasibleError):
        retime(rushed, DynamicsLimits(1.0, 2.0), max_rounds=0)


def test_sample_includes_final_time() -> None:
    tr = _solved()
    states = sample(tr, 0.25)
    assert states.times[0] == tr.t0
    assert states.times[-1] == pytest.approx(tr.t_f)
    assert np.all(np.diff(states.times) <= 0.25 + 1e-12)
    assert states.positions.shape == (len(states), 3)


def test_simplify_straight_path_keeps_endpoints(make_grid) -> None:
    g = make_grid(np.zeros((8, 3, 1)))
    path = shortest_path(g, (0, 1, 0), (7, 1, 0))
    ws = simplify_path(path, g)
    assert ws.points == pytest.approx(np.array([[0.5, 1.5, 0.5], [7.5, 1.5, 0.5]]))


def test_simplify_keeps_corners_and_exact_endpoints(make_grid) -> None:
    blocked = np.zeros((5, 5, 1), dtype=bool)
    blocked[1:5, 1:4, 0] = True
    g = make_grid(blocked, connectivity=6)
    path = shortest_path(g, (0, 4, 0), (4, 0, 0))
    ws = simplify_path(path, g, start=(0.3, 4.6, 0.5), end=(4.7, 0.2, 0.5))

    assert ws.points[0] == pytest.approx([0.3, 4.6, 0.5])
    assert ws.points[-1] == pytest.approx([4.7, 0.2, 0.5])
    for a, b in zip(ws.points, ws.points[1:]):
        assert g.segment_is_free(a, b)


def test_tour_waypoints_are_closed_with_goal_flags(make_grid) -> None:
    g = make_grid(np.zeros((6, 6, 1)))
    start, goal_a, goal_b = (0, 0, 0), (5, 0, 0), (5, 5, 0)
    legs = [shortest_path(g, start, goal_a), shortest_path(g, goal_a, goal_b), shortest_path(g, goal_b, start)]
    points = [g.cell_to_world(goal_a), g.cell_to_world(goal_b)]
    ws = build_tour_waypoints(legs, g.cell_to_world(start), points, g)

    assert ws.closed
    assert sum(ws.is_goal) == 2
    assert ws.leg_index[-1] == 2
    with pytest.raises(ValueError):
        build_tour_waypoints(legs[:2], g.cell_to_world(start), points, g)


def test_inserted_waypoint_inherits_leg() -> None:
    ws = WaypointSequence(POINTS, (False,) * 5, (False, True, True, True, False), (0, 0, 1, 2, 3), (-1,) * 5)
    longer = ws.inserted(1, [4.0, 2.0, 1.5])
    assert longer.segment_count == 5
    assert longer.leg_index == (0, 0, 1, 1, 2, 3)
    assert longer.is_goal[2] is False


def test_shortcut_collapses_diagonal_staircase(make_grid) -> None:
    g = make_grid(np.zeros((10, 6, 1)))
    path = shortest_path(g, (0, 0, 0), (9, 5, 0))
    open_space = ClearanceModel((), 0.3, 0.0)

    assert len(simplify_path(path, g).points) >= 3
    ws = shortcut_path(path, g, open_space)
    assert ws.points == pytest.approx(np.array([[0.5, 0.5, 0.5], [9.5, 5.5, 0.5]]))
    assert ws.cell_index == (0, len(path.cells) - 1)


def test_shortcut_chords_keep_cell_clearance(make_grid) -> None:
    box = BoxObstacle(Vec3(3.0, 3.0, -1.0), Vec3(6.0, 6.0, 2.0))
    blocked = np.zeros((10, 10, 1), dtype=bool)
    blocked[3:6, 3:6, 0] = True
    g = make_grid(blocked)
    model = ClearanceModel((box,), 0.3, 0.1)
    path = shortest_path(g, (0, 4, 0), (9, 4, 0))
    cell_floor = min(model.target, float(np.min(model.clearance(np.asarray(path.waypoints)))))

    ws = shortcut_path(path, g, model, start=(0.4, 4.5, 0.5), end=(9.6, 4.5, 0.5))

    assert ws.points[0] == pytest.approx([0.4, 4.5, 0.5])
    assert ws.points[-1] == pytest.approx([9.6, 4.5, 0.5])
    assert ws.cell_index[0] == ws.cell_index[-1] == -1
    assert len(ws.points) < len(path.cells)
    for a, b in zip(ws.points, ws.points[1:]):
        assert g.segment_is_free(a, b)
        assert model.chord_clearance(a, b, 0.25) >= cell_floor - 1e-6


def test_clearance_model_subtracts_body_radius() -> None:
    model = ClearanceModel((BoxObstacle(Vec3(0.0, 0.0, 0.0), Vec3(1.0, 1.0, 1.0)),), 0.3, 0.1, margin=0.05)
    assert model.clearance(np.array([[2.0, 0.5, 0.5], [1.0, 2.0, 0.5]])) == pytest.approx([0.7, 0.7])
    assert model.target == pytest.approx(0.15)
    assert model.chord_clearance(np.array([2.0, -1.0, 0.5]), np.array([2.0, 2.0, 0.5]), 0.1) == pytest.approx(0.7)
    assert np.isinf(ClearanceModel((), 0.3, 0.0).clearance(np.zeros((2, 3)))).all()


def test_tour_waypoints_use_shortcuts_with_clearance_model(make_grid) -> None:
    g = make_grid(np.zeros((10, 6, 1)))
    start, goal = (0, 0, 0), (9, 5, 0)
    legs = [shortest_path(g, start, goal), shortest_path(g, goal, start)]
    points = [g.cell_to_world(goal)]

    plain = build_tour_waypoints(legs, g.cell_to_world(start), points, g)
    pulled = build_tour_waypoints(legs, g.cell_to_world(start), points, g, clearance=ClearanceModel((), 0.3, 0.0))

    assert pulled.segment_count == 2
    assert plain.segment_count > pulled.segment_count
    assert pulled.is_goal == (False, True, False)
    assert pulled.leg_index == (0, 0, 1)


def _acceleration_gram(durations: np.ndarray) -> np.ndarray:
    unit = np.zeros((8, 8))
    for i in range(2, 8):
        for j in range(2, 8):
            unit[i, j] = i * (i - 1) * j * (j - 1) / (i + j - 3)
    return scipy.linalg.block_diag(*[unit * t**-3 for t in durations])


def _spline_competitor_snap(points: np.ndarray, durations: np.ndarray) -> float:
    """Snap cost of the minimum-acceleration (natural-spline objective) trajectory in the same space."""
    q, a, b = minsnap_system(points, durations)
    gram = _acceleration_gram(durations)
    gram /= np.max(np.abs(gram))
    size, rows = gram.shape[0], a.shape[0]
    kkt = np.block([[2.0 * gram, a.T], [a, np.zeros((rows, rows))]])
    x = scipy.linalg.solve(kkt, np.vstack([np.zeros((size, 3)), b]))[:size]
    assert a @ x == pytest.approx(b, abs=1e-7)
    return sum(float(x[:, axis] @ q @ x[:, axis]) for axis in range(3))


def test_random_waypoint_sets() -> None:
    rng = np.random.default_rng(2024)
    limits = DynamicsLimits(1.0, 2.0)
    for _ in range(50):
        points = rng.uniform(0.0, 10.0, size=(int(rng.integers(3, 11)), 3))
        ws = WaypointSequence.from_points(points)
        durations = allocate_times(ws, limits)
        tr = solve_minsnap(ws, durations)

        residuals = tr.junction_residuals()
        assert residuals[0] < 1e-6
        assert residuals[1] < 1e-6
        assert residuals[2] < 1e-4
        assert tr.evaluate(tr.knots[:-1]) == pytest.approx(points[:-1], abs=1e-6)

        assert tr.snap_cost() <= _spline_competitor_snap(points, durations) * (1.0 + 1e-6)

        stretch = float(rng.uniform(0.5, 3.0))
        stretched = solve_minsnap(ws, durations * stretch)
        assert stretched.snap_cost() == pytest.approx(tr.snap_cost() * stretch**-7, rel=1e-6)

        h = 1e-5
        inner = tr.knots[0] + rng.uniform(0.05, 0.95, size=5) * tr.duration
        for r in (1, 2):
            numeric = (tr.evaluate(inner + h, r - 1) - tr.evaluate(inner - h, r - 1)) / (2.0 * h)
            assert tr.evaluate(inner, r) == pytest.approx(numeric, rel=1e-4, abs=1e-4)
