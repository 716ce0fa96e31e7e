"""
Unit tests for scenario parsing, validation and serialisation.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from drone_mission_planner.errors import ScenarioParseError, ScenarioValidationError
from drone_mission_planner.ipso import IpsoParams
from drone_mission_planner.scenario import (
    BoxObstacle,
    Vec3,
    dump_scenario,
    emit_scenario,
    ipso_override,
    load_scenario,
    parse_scenario,
    signed_box_distance,
    validate_scenario,
)


def test_load_scenario_reads_all_fields(write_scenario, scenario_doc) -> None:
    s = load_scenario(write_scenario(scenario_doc()))

    assert s.bounds_max == Vec3(10.0, 4.0, 1.0)
    assert s.robot_ids == ("alpha",)
    assert s.robot_starts == (Vec3(0.5, 0.5, 0.5),)
    assert s.n_goals == 2
    assert s.dynamics.v_max_drone == 1.0
    assert s.grid_resolution == 1.0
    assert s.connectivity == 26


def test_separation_min_is_twice_inflated_radius(write_scenario, scenario_doc) -> None:
    s = load_scenario(write_scenario(scenario_doc()))
    assert s.separation_min == pytest.approx(0.9)


def test_robot_ids_default_to_position(write_scenario, scenario_doc) -> None:
    doc = scenario_doc(robots=[{"start": [0.5, 0.5, 0.5]}, {"start": [0.5, 3.5, 0.5]}])
    s = load_scenario(write_scenario(doc))
    assert s.robot_ids == ("0", "1")
    assert s.robot_id(1) == "1"


def test_optional_sections_take_defaults(write_scenario, scenario_doc) -> None:
    doc = scenario_doc()
    del doc["grid"]
    del doc["obstacles"]
    del doc["safety"]["clearance_margin"]
    s = load_scenario(write_scenario(doc))
    assert s.grid_resolution == 0.5
    assert s.connectivity == 26
    assert s.clearance_margin == 0.0
    assert s.obstacles == ()


def test_load_scenario_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.json")


def test_load_scenario_rejects_invalid_json(write_scenario) -> None:
    with pytest.raises(ScenarioParseError, match="invalid JSON"):
        load_scenario(write_scenario("{not json"))


@pytest.mark.parametrize(
    ("mutate", "field"),
    [
        (lambda d: d.update(extra=1), "scenario"),
        (lambda d: d["safety"].pop("r_r"), "safety"),
        (lambda d: d["bounds"].update(min=[0.0, 0.0]), "bounds.min"),
        (lambda d: d["dynamics"].update(v_max=True), "dynamics.v_max"),
        (lambda d: d["grid"].update(connectivity=6.0), "grid.connectivity"),
        (lambda d: d.update(ipso={"warp": 2}), "ipso"),
    ],
)
def test_parse_errors_name_the_field(scenario_doc, mutate, field: str) -> None:
    doc = scenario_doc()
    mutate(doc)
    with pytest.raises(ScenarioParseError) as excinfo:
        parse_scenario(doc)
    assert excinfo.value.field == field


def test_inflation_factor_must_exceed_one(write_scenario, scenario_doc) -> None:
    doc = scenario_doc()
    doc["safety"]["phi"] = 1.0
    with pytest.raises(ScenarioValidationError) as excinfo:
        load_scenario(write_scenario(doc))
    assert any("inflation_factor" in v for v in excinfo.value.violations)


def test_validation_collects_every_violation(scenario_doc) -> None:
    doc = scenario_doc()
    doc["safety"]["r_r"] = 0.0
    doc["dynamics"]["a_max"] = -1.0
    doc["grid"]["connectivity"] = 18
    report = validate_scenario(parse_scenario(doc))

    assert not report.ok
    assert len(report.violations) == 3


def test_goal_inside_inflated_obstacle_is_rejected(scenario_doc) -> None:
    doc = scenario_doc(obstacles=[{"min": [9.0, 0.7, 0.0], "max": [10.0, 2.0, 1.0]}])
    report = validate_scenario(parse_scenario(doc))
    assert not report.ok
    assert any(v.startswith("goal 0") and "obstacles[0]" in v for v in report.violations)


def test_robot_outside_bounds_is_rejected(scenario_doc) -> None:
    doc = scenario_doc(robots=[{"id": "far", "start": [11.0, 0.5, 0.5]}])
    report = validate_scenario(parse_scenario(doc))
    assert "robot far (index 0) lies outside the workspace bounds" in report.violations


def test_degenerate_obstacle_and_duplicate_ids(scenario_doc) -> None:
    doc = scenario_doc(
        obstacles=[{"min": [3.0, 1.0, 0.0], "max": [3.0, 2.0, 1.0]}],
        robots=[{"id": "a", "start": [0.5, 0.5, 0.5]}, {"id": "a", "start": [0.5, 3.5, 0.5]}],
    )
    report = validate_scenario(parse_scenario(doc))
    assert "obstacles[0]: min must be strictly less than max" in report.violations
    assert "robots: ids must be unique" in report.violations


def test_dump_then_load_gives_equal_scenario(tmp_path: Path, write_scenario, scenario_doc) -> None:
    doc = scenario_doc(
        obstacles=[{"min": [4.0, 1.0, 0.0], "max": [5.0, 3.0, 1.0]}],
        ipso={"swarm_size": 12, "inertia": 0.6},
    )
    original = load_scenario(write_scenario(doc))
    target = tmp_path / "out" / "copy.json"
    dump_scenario(original, target)

    assert load_scenario(target) == original
    assert json.loads(target.read_text(encoding="utf-8")) == emit_scenario(original)


def test_ipso_section_feeds_parameters(write_scenario, scenario_doc) -> None:
    s = load_scenario(write_scenario(scenario_doc(ipso={"swarm_size": 12, "inertia": 0.6})))

    assert ipso_override(s, "swarm_size") == 12.0
    assert ipso_override(s, "patience") is None
    params = IpsoParams.from_scenario(s, swarm_size=None, max_iterations=7)
    assert params.swarm_size == 12
    assert params.inertia == 0.6
    assert params.max_iterations == 7


@pytest.mark.parametrize(
    ("point", "expected"),
    [
        ((3.0, 0.5, 0.5), 1.0),
        ((3.0, 4.0, 0.5), np.sqrt(1.0 + 1.0)),
        ((1.5, 0.5, 0.5), -0.5),
        ((2.0, 0.5, 0.5), 0.0),
    ],
)
def test_signed_box_distance(point, expected: float) -> None:
    box = BoxObstacle(Vec3(1.0, 0.0, 0.0), Vec3(2.0, 3.0, 1.0))
    assert signed_box_distance(np.array(point), box)[0] == pytest.approx(expected)


def test_signed_box_distance_is_vectorised() -> None:
    box = BoxObstacle(Vec3(0.0, 0.0, 0.0), Vec3(1.0, 1.0, 1.0))
    points = np.array([[2.0, 0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 3.0]])
    assert signed_box_distance(points, box) == pytest.approx([1.0, -0.5, 2.0])
