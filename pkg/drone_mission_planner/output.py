"""
Output formatters and file writers for mission results.

result.json is written with sorted keys and repr-exact floats so a rerun
with the same seed reproduces it byte for byte; wall-clock timings go to a
separate timing.json.
"""

import csv
import json
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence

import numpy as np

from drone_mission_planner.cost_matrices import FilteredProblem, format_cost
from drone_mission_planner.minsnap import PiecewiseTrajectory, WaypointSequence
from drone_mission_planner.plan import Plan
from drone_mission_planner.safety import SafetyReport, shared_time_grid

if TYPE_CHECKING:
    from drone_mission_planner.oracle import OracleResult
    from drone_mission_planner.pipeline import MissionResult

SCHEMA_VERSION = 1

RESULT_FILE = "result.json"
TIMING_FILE = "timing.json"
CONVERGENCE_FILE = "convergence.csv"
TRAJECTORIES_FILE = "trajectories.csv"
SAFETY_FILE = "safety.csv"
MATRICES_RG_FILE = "matrices_rg.csv"
MATRICES_GG_FILE = "matrices_gg.csv"
ORACLE_FILE = "oracle.json"
LOG_FILE = "mission-planner.log"


def finite_or_none(value: float) -> Optional[float]:
    """JSON has no infinity; unbounded values are written as null."""
    value = float(value)
    return value if math.isfinite(value) else None


def plan_document(plan: Plan, fp: FilteredProblem) -> Dict[str, Any]:
    """Plan with goal and robot indices mapped back to the scenario."""
    robot_ids = fp.matrices.robot_ids
    return {
        "permutation": [int(fp.active_goals[j]) for j in plan.permutation],
        "breakpoints": [int(b) for b in plan.breakpoints],
        "tours": [
            {"robot_id": robot_ids[r], "goals": [int(fp.active_goals[j]) for j in tour]}
            for r, tour in enumerate(plan.tours)
        ],
    }


def trajectory_document(robot_id: str, tr: PiecewiseTrajectory) -> Dict[str, Any]:
    return {
        "robot_id": robot_id,
        "t0": float(tr.t0),
        "t_f": float(tr.t_f),
        "durations": [float(d) for d in tr.durations],
        "coeffs": tr.coeffs.tolist(),
        "waypoints": tr.waypoints.points.tolist(),
        "is_goal": list(tr.waypoints.is_goal),
    }


def trajectory_from_document(doc: Dict[str, Any]) -> PiecewiseTrajectory:
    """Rebuild a trajectory from its result.json entry."""
    points = np.asarray(doc["waypoints"], dtype=float)
    ws = WaypointSequence.from_points(points)
    if "is_goal" in doc:
        ws = WaypointSequence(points, ws.hold, tuple(bool(g) for g in doc["is_goal"]), ws.leg_index, ws.cell_index)
    return PiecewiseTrajectory(
        np.asarray(doc["durations"], dtype=float),
        np.asarray(doc["coeffs"], dtype=float).reshape(-1, 3, 8),
        float(doc["t0"]),
        ws,
    )


def safety_document(report: SafetyReport, separation_min: float, clearance_min: float, check_dt: float) -> Dict[str, Any]:
    return {
        "final_ok": bool(report.final_ok),
        "rounds_used": int(report.rounds_used),
        "separation_min": float(separation_min),
        "clearance_min": float(clearance_min),
        "check_dt": float(check_dt),
        "min_separation": finite_or_none(report.overall_min_separation),
        "min_clearance": finite_or_none(report.overall_min_clearance),
        "remaining_violations": len(report.violations),
        "rounds": report.rounds,
    }


class OutputFormatter:
    """Base class for result formatters."""

    def format(self, result: "MissionResult") -> str:
        """
        Format a mission result.

        Args:
            result: Completed pipeline result

        Returns:
            Formatted string
        """
        raise NotImplementedError


class TextFormatter(OutputFormatter):
    """Human-readable run summary."""

    def format(self, result: "MissionResult") -> str:
        lines = []
        lines.append("=" * 60)
        lines.append("Mission Plan")
        lines.append("=" * 60)
        doc = plan_document(result.plan, result.problem)
        for tour in doc["tours"]:
            goals = " -> ".join(str(g) for g in tour["goals"]) or "(hover)"
            lines.append(f"{tour['robot_id']}: start -> {goals} -> start")
        for goal, reason in result.problem.dropped_goals:
            lines.append(f"Dropped goal {goal}: {reason}")
        for robot, reason in result.problem.dropped_robots:
            lines.append(f"Dropped robot {result.scenario.robot_id(robot)}: {reason}")
        lines.append("")
        lines.append(f"Makespan (planned):   {result.makespan_pre:.3f} s")
        lines.append(f"Makespan (validated): {result.makespan_post:.3f} s")
        lines.append(f"IPSO iterations:      {result.optimization.iterations}")
        status = "OK" if result.safety.final_ok else "FAILED"
        lines.append(f"Safety:               {status} after {result.safety.rounds_used} replan rounds")
        lines.append(f"Min separation:       {result.safety.overall_min_separation:.3f} m")
        lines.append(f"Min clearance:        {result.safety.overall_min_clearance:.3f} m")
        return "\n".join(lines)


class JSONFormatter(OutputFormatter):
    """Deterministic result.json document."""

    def format(self, result: "MissionResult") -> str:
        fp = result.problem
        s = result.scenario
        output = {
            "schema_version": SCHEMA_VERSION,
            "seed": int(result.seed),
            "scenario_md5": result.scenario_md5,
            "plan": plan_document(result.plan, fp),
            "dropped_goals": [{"goal": int(g), "reason": r} for g, r in fp.dropped_goals],
            "dropped_robots": [{"robot_id": s.robot_id(i), "reason": r} for i, r in fp.dropped_robots],
            "makespan_pre": finite_or_none(result.makespan_pre),
            "makespan_post": finite_or_none(result.makespan_post),
            "convergence": {
                "iterations": int(result.optimization.iterations),
                "history": [finite_or_none(v) for v in result.optimization.history],
                "seed_makespan": finite_or_none(result.optimization.seed_fitness),
            },
            "ipso": result.params_document,
            "safety": safety_document(result.safety, s.separation_min, s.clearance_margin, result.check_dt),
            "trajectories": [trajectory_document(rt.robot_id, rt.trajectory) for rt in result.tours],
        }
        return json.dumps(output, indent=2, sort_keys=True)


def get_formatter(format_type: str) -> OutputFormatter:
    """
    Get a formatter by type name.

    Args:
        format_type: Format type ('text' or 'json')

    Returns:
        OutputFormatter instance

    Raises:
        ValueError: If format type is not supported
    """
    formatters = {
        "text": TextFormatter(),
        "json": JSONFormatter(),
    }
    if format_type.lower() not in formatters:
        raise ValueError(
            f"Unsupported format: {format_type}. Supported formats: {', '.join(formatters.keys())}"
        )
    return formatters[format_type.lower()]


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_convergence_csv(path: Path, history: Sequence[float]) -> Path:
    return _write_rows(path, ["iteration", "gbest_makespan_s"], ((i, format_cost(v)) for i, v in enumerate(history)))


def write_trajectories_csv(path: Path, robot_ids: Sequence[str], trajs: Sequence[PiecewiseTrajectory], dt: float) -> Path:
    """Positions, velocities and accelerations of every robot on one shared time grid."""
    times = shared_time_grid(trajs, dt)

    def rows():
        for robot_id, tr in zip(robot_ids, trajs):
            pos = tr.evaluate(times, 0)
            vel = tr.evaluate(times, 1)
            acc = tr.evaluate(times, 2)
            for k, t in enumerate(times):
                yield [robot_id, repr(float(t))] + [repr(float(v)) for v in (*pos[k], *vel[k], *acc[k])]

    header = ["robot_id", "t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"]
    return _write_rows(path, header, rows())


def read_trajectories_csv(path: Path) -> Dict[str, np.ndarray]:
    """Per-robot arrays of (t, x, y, z, vx, vy, vz, ax, ay, az) rows."""
    data: Dict[str, List[List[float]]] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        next(reader)
        for row in reader:
            data.setdefault(row[0], []).append([float(v) for v in row[1:]])
    return {robot: np.array(rows) for robot, rows in data.items()}


def write_safety_csv(path: Path, report: SafetyReport) -> Path:
    rows = (
        (repr(float(t)), format_cost(s), format_cost(c))
        for t, s, c in zip(report.times, report.min_separation, report.min_clearance)
    )
    return _write_rows(path, ["t", "min_separation", "min_clearance"], rows)


def write_json(path: Path, document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = document if isinstance(document, str) else json.dumps(document, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def oracle_document(result: "OracleResult", fp: FilteredProblem, scenario_md5: Optional[str]) -> Dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario_md5": scenario_md5,
        "optimal_makespan": finite_or_none(result.optimal_makespan),
        "nodes_enumerated": int(result.nodes_enumerated),
        "plans": [plan_document(plan, fp) for plan in result.plans],
    }
