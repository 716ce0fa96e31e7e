"""
Scenario model.

Parses mission scenario JSON files into immutable value objects and validates
the instance invariants (bounds, obstacles, safety radius, dynamics limits).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from drone_mission_planner.errors import ScenarioParseError, ScenarioValidationError

DEFAULT_GRID_RESOLUTION = 0.5
DEFAULT_CONNECTIVITY = 26
SUPPORTED_CONNECTIVITY = (6, 26)

_TOP_LEVEL_KEYS = {"bounds", "obstacles", "robots", "goals", "safety", "dynamics", "grid", "ipso"}
_IPSO_KEYS = {
    "swarm_size",
    "max_iterations",
    "inertia",
    "c1",
    "c2",
    "v_max_keys",
    "seed_ratio",
    "injection_period",
    "perturbation_probability",
    "tolerance",
    "patience",
}


@dataclass(frozen=True)
class Vec3:
    """A point or displacement in meters."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def as_list(self) -> List[float]:
        return [self.x, self.y, self.z]

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.z))

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Vec3":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class BoxObstacle:
    """Axis-aligned box obstacle."""

    min_corner: Vec3
    max_corner: Vec3

    def is_well_formed(self) -> bool:
        lo, hi = self.min_corner.as_array(), self.max_corner.as_array()
        return bool(np.all(lo < hi))


@dataclass(frozen=True)
class DynamicsLimits:
    """Speed and acceleration bounds shared by every drone."""

    v_max_drone: float
    a_max_drone: float


@dataclass(frozen=True)
class Scenario:
    """A complete mission planning instance."""

    bounds_min: Vec3
    bounds_max: Vec3
    obstacles: Tuple[BoxObstacle, ...]
    robot_starts: Tuple[Vec3, ...]
    goals: Tuple[Vec3, ...]
    safety_radius: float
    inflation_factor: float
    clearance_margin: float
    dynamics: DynamicsLimits
    grid_resolution: float = DEFAULT_GRID_RESOLUTION
    connectivity: int = DEFAULT_CONNECTIVITY
    robot_ids: Tuple[str, ...] = ()
    ipso_overrides: Tuple[Tuple[str, float], ...] = field(default_factory=tuple)

    @property
    def n_robots(self) -> int:
        return len(self.robot_starts)

    @property
    def n_goals(self) -> int:
        return len(self.goals)

    def robot_id(self, index: int) -> str:
        """Return the id of robot `index`, falling back to its position."""
        if index < len(self.robot_ids):
            return self.robot_ids[index]
        return str(index)

    @property
    def separation_min(self) -> float:
        """Minimum allowed inter-robot distance, 2·R_r·φ."""
        return 2.0 * self.safety_radius * self.inflation_factor


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validate_scenario: ok flag plus every violation found."""

    ok: bool
    violations: Tuple[str, ...]


def signed_box_distance(points: np.ndarray, box: BoxObstacle) -> np.ndarray:
    """
    Signed Euclidean distance from points to the surface of an axis-aligned box.

    Args:
        points: (N, 3) or (3,) array of positions
        box: Obstacle box

    Returns:
        Distances, negative for points strictly inside the box
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lo = box.min_corner.as_array()
    hi = box.max_corner.as_array()
    outside = np.maximum(np.maximum(lo - pts, 0.0), pts - hi)
    outside_dist = np.linalg.norm(outside, axis=1)
    inside_depth = np.min(np.minimum(pts - lo, hi - pts), axis=1)
    inside = np.all((pts > lo) & (pts < hi), axis=1)
    result = np.where(inside, -inside_depth, outside_dist)
    if np.asarray(points).ndim == 1:
        return result[:1]
    return result


def _inside_bounds(point: Vec3, lo: Vec3, hi: Vec3) -> bool:
    p = point.as_array()
    return bool(np.all(p >= lo.as_array()) and np.all(p <= hi.as_array()))


def validate_scenario(s: Scenario) -> ValidationReport:
    """
    Check every scenario invariant and collect the failures.

    Args:
        s: Scenario to check

    Returns:
        ValidationReport; never raises
    """
    violations: List[str] = []

    if s.n_robots < 1:
        violations.append("robots: at least one robot is required")
    if s.n_goals < 1:
        violations.append("goals: at least one goal is required")
    if not (math.isfinite(s.inflation_factor) and s.inflation_factor > 1.0):
        violations.append(f"safety.phi (inflation_factor) must be > 1, got {s.inflation_factor}")
    if not (math.isfinite(s.safety_radius) and s.safety_radius > 0.0):
        violations.append(f"safety.r_r (safety_radius) must be > 0, got {s.safety_radius}")
    if not (math.isfinite(s.clearance_margin) and s.clearance_margin >= 0.0):
        violations.append(f"safety.clearance_margin must be >= 0, got {s.clearance_margin}")
    if not (math.isfinite(s.grid_resolution) and s.grid_resolution > 0.0):
        violations.append(f"grid.resolution must be > 0, got {s.grid_resolution}")
    if s.connectivity not in SUPPORTED_CONNECTIVITY:
        violations.append(f"grid.connectivity must be 6 or 26, got {s.connectivity}")
    if not (math.isfinite(s.dynamics.v_max_drone) and s.dynamics.v_max_drone > 0.0):
        violations.append(f"dynamics.v_max must be > 0, got {s.dynamics.v_max_drone}")
    if not (math.isfinite(s.dynamics.a_max_drone) and s.dynamics.a_max_drone > 0.0):
        violations.append(f"dynamics.a_max must be > 0, got {s.dynamics.a_max_drone}")

    bounds_ok = True
    for name, corner in (("bounds.min", s.bounds_min), ("bounds.max", s.bounds_max)):
        if not corner.is_finite():
            violations.append(f"{name} has a non-finite component")
            bounds_ok = False
    if bounds_ok and not np.all(s.bounds_min.as_array() < s.bounds_max.as_array()):
        violations.append("bounds.min must be strictly less than bounds.max on every axis")
        bounds_ok = False

    obstacles_ok: List[BoxObstacle] = []
    for idx, box in enumerate(s.obstacles):
        if not (box.min_corner.is_finite() and box.max_corner.is_finite()):
            violations.append(f"obstacles[{idx}] has a non-finite corner")
        elif not box.is_well_formed():
            violations.append(f"obstacles[{idx}]: min must be strictly less than max")
        else:
            obstacles_ok.append(box)

    if len(set(s.robot_ids)) != len(s.robot_ids):
        violations.append("robots: ids must be unique")

    radius = s.safety_radius if s.safety_radius > 0 else 0.0
    entities = [("robot", i, p) for i, p in enumerate(s.robot_starts)]
    entities += [("goal", j, p) for j, p in enumerate(s.goals)]
    for kind, idx, point in entities:
        label = f"robot {s.robot_id(idx)} (index {idx})" if kind == "robot" else f"goal {idx}"
        if not point.is_finite():
            violations.append(f"{label} has a non-finite coordinate")
            continue
        if bounds_ok and not _inside_bounds(point, s.bounds_min, s.bounds_max):
            violations.append(f"{label} lies outside the workspace bounds")
            continue
        for obs_idx, box in enumerate(obstacles_ok):
            dist = float(signed_box_distance(point.as_array(), box)[0])
            if dist <= radius:
                violations.append(
                    f"{label} lies inside obstacles[{obs_idx}] inflated by r_r "
                    f"(distance {dist:.3f} m)"
                )
                break

    return ValidationReport(ok=not violations, violations=tuple(violations))


def _require_mapping(value: Any, field_name: str, allowed: set, required: set) -> Dict:
    if not isinstance(value, dict):
        raise ScenarioParseError("expected an object", field_name)
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ScenarioParseError(f"unknown key(s) {', '.join(unknown)}", field_name)
    missing = sorted(required - set(value))
    if missing:
        raise ScenarioParseError(f"missing key(s) {', '.join(missing)}", field_name)
    return value


def _number(value: Any, field_name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioParseError(f"expected a number, got {value!r}", field_name)
    return float(value)


def _vec3(value: Any, field_name: str) -> Vec3:
    if not isinstance(value, list) or len(value) != 3:
        raise ScenarioParseError("expected a 3-element array", field_name)
    return Vec3(*(_number(v, f"{field_name}[{i}]") for i, v in enumerate(value)))


def parse_scenario(data: Any) -> Scenario:
    """
    Build a Scenario from decoded JSON without running invariant checks.

    Args:
        data: Decoded JSON document

    Returns:
        Scenario

    Raises:
        ScenarioParseError: If the document does not follow the schema
    """
    root = _require_mapping(
        data, "scenario", _TOP_LEVEL_KEYS, {"bounds", "robots", "goals", "safety", "dynamics"}
    )

    bounds = _require_mapping(root["bounds"], "bounds", {"min", "max"}, {"min", "max"})
    bounds_min = _vec3(bounds["min"], "bounds.min")
    bounds_max = _vec3(bounds["max"], "bounds.max")

    obstacles_raw = root.get("obstacles", [])
    if not isinstance(obstacles_raw, list):
        raise ScenarioParseError("expected an array", "obstacles")
    obstacles = []
    for idx, entry in enumerate(obstacles_raw):
        name = f"obstacles[{idx}]"
        box = _require_mapping(entry, name, {"min", "max"}, {"min", "max"})
        obstacles.append(BoxObstacle(_vec3(box["min"], f"{name}.min"), _vec3(box["max"], f"{name}.max")))

    robots_raw = root["robots"]
    if not isinstance(robots_raw, list):
        raise ScenarioParseError("expected an array", "robots")
    robot_ids = []
    starts = []
    for idx, entry in enumerate(robots_raw):
        name = f"robots[{idx}]"
        robot = _require_mapping(entry, name, {"id", "start"}, {"start"})
        robot_id = robot.get("id", idx)
        if isinstance(robot_id, bool) or not isinstance(robot_id, (str, int)):
            raise ScenarioParseError("expected a string or integer id", f"{name}.id")
        robot_ids.append(str(robot_id))
        starts.append(_vec3(robot["start"], f"{name}.start"))

    goals_raw = root["goals"]
    if not isinstance(goals_raw, list):
        raise ScenarioParseError("expected an array", "goals")
    goals = [_vec3(g, f"goals[{idx}]") for idx, g in enumerate(goals_raw)]

    safety = _require_mapping(
        root["safety"], "safety", {"r_r", "phi", "clearance_margin"}, {"r_r", "phi"}
    )
    dynamics = _require_mapping(root["dynamics"], "dynamics", {"v_max", "a_max"}, {"v_max", "a_max"})
    grid = _require_mapping(root.get("grid", {}), "grid", {"resolution", "connectivity"}, set())

    connectivity = grid.get("connectivity", DEFAULT_CONNECTIVITY)
    if isinstance(connectivity, bool) or not isinstance(connectivity, int):
        raise ScenarioParseError(f"expected an integer, got {connectivity!r}", "grid.connectivity")

    ipso = _require_mapping(root.get("ipso", {}), "ipso", _IPSO_KEYS, set())
    overrides = tuple(sorted((key, _number(value, f"ipso.{key}")) for key, value in ipso.items()))

    return Scenario(
        bounds_min=bounds_min,
        bounds_max=bounds_max,
        obstacles=tuple(obstacles),
        robot_starts=tuple(starts),
        goals=tuple(goals),
        safety_radius=_number(safety["r_r"], "safety.r_r"),
        inflation_factor=_number(safety["phi"], "safety.phi"),
        clearance_margin=_number(safety.get("clearance_margin", 0.0), "safety.clearance_margin"),
        dynamics=DynamicsLimits(
            v_max_drone=_number(dynamics["v_max"], "dynamics.v_max"),
            a_max_drone=_number(dynamics["a_max"], "dynamics.a_max"),
        ),
        grid_resolution=_number(grid.get("resolution", DEFAULT_GRID_RESOLUTION), "grid.resolution"),
        connectivity=connectivity,
        robot_ids=tuple(robot_ids),
        ipso_overrides=overrides,
    )


def load_scenario(path: Path) -> Scenario:
    """
    Load and validate a scenario file.

    Args:
        path: Path to the scenario JSON file

    Returns:
        A validated Scenario

    Raises:
        FileNotFoundError: If the file doesn't exist
        ScenarioParseError: If the file is not valid JSON or breaks the schema
        ScenarioValidationError: If an invariant is violated
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found: {path}")

    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ScenarioParseError(f"file is not UTF-8: {exc}") from exc

    scenario = parse_scenario(data)
    report = validate_scenario(scenario)
    if not report.ok:
        raise ScenarioValidationError(list(report.violations))
    return scenario


def emit_scenario(s: Scenario) -> Dict[str, Any]:
    """Serialize a scenario to the JSON document layout read by load_scenario."""
    document: Dict[str, Any] = {
        "bounds": {"min": s.bounds_min.as_list(), "max": s.bounds_max.as_list()},
        "obstacles": [
            {"min": box.min_corner.as_list(), "max": box.max_corner.as_list()} for box in s.obstacles
        ],
        "robots": [
            {"id": s.robot_id(idx), "start": start.as_list()}
            for idx, start in enumerate(s.robot_starts)
        ],
        "goals": [goal.as_list() for goal in s.goals],
        "safety": {
            "r_r": s.safety_radius,
            "phi": s.inflation_factor,
            "clearance_margin": s.clearance_margin,
        },
        "dynamics": {"v_max": s.dynamics.v_max_drone, "a_max": s.dynamics.a_max_drone},
        "grid": {"resolution": s.grid_resolution, "connectivity": s.connectivity},
    }
    if s.ipso_overrides:
        document["ipso"] = dict(s.ipso_overrides)
    return document


def dump_scenario(s: Scenario, path: Path) -> None:
    """Write a scenario as UTF-8 JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(emit_scenario(s), indent=2), encoding="utf-8")


def ipso_override(s: Scenario, key: str) -> Optional[float]:
    """Return the scenario's override for an optimizer parameter, if any."""
    return dict(s.ipso_overrides).get(key)
