"""
Shared fixtures: scenario documents, hand-built grids and matrix-only problems.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np
import pytest

from drone_mission_planner.cost_matrices import CostMatrices, FilteredProblem, filter_unreachable
from drone_mission_planner.grid import OccupancyGrid
from drone_mission_planner.scenario import DynamicsLimits, Vec3

SCENARIOS_DIR = Path(__file__).resolve().parent.parent / "scenarios"

_BASE_SCENARIO: Dict[str, Any] = {
    "bounds": {"min": [0.0, 0.0, 0.0], "max": [10.0, 4.0, 1.0]},
    "obstacles": [],
    "robots": [{"id": "alpha", "start": [0.5, 0.5, 0.5]}],
    "goals": [[9.5, 0.5, 0.5], [9.5, 3.5, 0.5]],
    "safety": {"r_r": 0.3, "phi": 1.5, "clearance_margin": 0.0},
    "dynamics": {"v_max": 1.0, "a_max": 2.0},
    "grid": {"resolution": 1.0, "connectivity": 26},
}


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS_DIR


@pytest.fixture
def scenario_doc() -> Callable[..., Dict[str, Any]]:
    """Factory for a small valid scenario document; keyword arguments replace top-level keys."""

    def _make(**overrides: Any) -> Dict[str, Any]:
        doc = copy.deepcopy(_BASE_SCENARIO)
        doc.update(copy.deepcopy(overrides))
        return doc

    return _make


@pytest.fixture
def write_scenario(tmp_path: Path) -> Callable[..., Path]:
    def _write(payload: Any, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def limits() -> DynamicsLimits:
    return DynamicsLimits(v_max_drone=1.0, a_max_drone=2.0)


@pytest.fixture
def make_grid() -> Callable[..., OccupancyGrid]:
    """Grid with unit origin at zero from a boolean blocked field."""

    def _make(blocked: np.ndarray, resolution: float = 1.0, connectivity: int = 26) -> OccupancyGrid:
        blocked = np.asarray(blocked, dtype=bool).copy()
        return OccupancyGrid(blocked.shape, resolution, Vec3(0.0, 0.0, 0.0), blocked, 0.0, connectivity)

    return _make


@pytest.fixture
def make_problem() -> Callable[..., FilteredProblem]:
    """Filtered problem built straight from C_RG and C_GG, without paths."""

    def _make(c_rg: Sequence[Sequence[float]], c_gg: Sequence[Sequence[float]]) -> FilteredProblem:
        c_rg = np.asarray(c_rg, dtype=float)
        c_gg = np.asarray(c_gg, dtype=float)
        n_r, n_g = c_rg.shape
        m = CostMatrices(
            c_rg,
            c_gg,
            [[None] * n_g for _ in range(n_r)],
            [[None] * n_g for _ in range(n_g)],
            tuple(f"r{i}" for i in range(n_r)),
            tuple(range(n_g)),
        )
        return filter_unreachable(m)

    return _make


@pytest.fixture
def euclidean_problem(make_problem) -> Callable[..., FilteredProblem]:
    """Random planar instance with straight-line costs."""

    def _make(n_robots: int, n_goals: int, seed: int = 0, robots: Optional[np.ndarray] = None) -> FilteredProblem:
        rng = np.random.default_rng(seed)
        starts = robots if robots is not None else rng.uniform(0.0, 20.0, size=(n_robots, 2))
        goals = rng.uniform(0.0, 20.0, size=(n_goals, 2))
        c_rg = np.linalg.norm(starts[:, None, :] - goals[None, :, :], axis=2)
        c_gg = np.linalg.norm(goals[:, None, :] - goals[None, :, :], axis=2)
        return make_problem(c_rg, c_gg)

    return _make


@pytest.fixture
def corridor_problem(make_problem) -> FilteredProblem:
    """Two robots at the ends of a 20 m line and six goals on it."""
    starts = np.array([0.5, 19.5])
    goals = np.array([2.5, 4.5, 6.5, 13.5, 15.5, 17.5])
    return make_problem(np.abs(starts[:, None] - goals[None, :]), np.abs(goals[:, None] - goals[None, :]))
