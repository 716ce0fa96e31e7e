"""
Tests for the command-line interface: subcommands, exit codes and error output.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path
from typing import List

import pytest

from drone_mission_planner.cli import (
    EXIT_INFEASIBLE,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_SAFETY,
    EXIT_UNEXPECTED,
    build_parser,
    exit_code_for,
    main,
)
from drone_mission_planner.errors import (
    EmptyProblemError,
    GridTooLargeError,
    MinSnapSolveError,
    OracleSizeError,
    RetimeInfeasibleError,
    ScenarioParseError,
    ScenarioValidationError,
    StageError,
)

FAST = ["--swarm", "10", "--ipso-iters", "15", "--threads", "1"]


def _exit_code(argv: List[str]) -> int:
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    return excinfo.value.code


@pytest.fixture
def corridor(tmp_path: Path, scenarios_dir: Path) -> Path:
    target = tmp_path / "corridor.json"
    shutil.copy(scenarios_dir / "oracle_two_by_six.json", target)
    return target


@pytest.mark.parametrize(
    ("exc", "code"),
    [
        (EmptyProblemError("empty"), EXIT_INFEASIBLE),
        (OracleSizeError("too big"), EXIT_INFEASIBLE),
        (RetimeInfeasibleError("slow"), EXIT_INFEASIBLE),
        (GridTooLargeError("huge"), EXIT_INFEASIBLE),
        (ScenarioParseError("bad", "bounds"), EXIT_INPUT),
        (ScenarioValidationError(["phi"]), EXIT_INPUT),
        (FileNotFoundError("gone"), EXIT_INPUT),
        (StageError("matrices", OracleSizeError("x")), EXIT_INFEASIBLE),
        (StageError("scenario", ScenarioParseError("bad")), EXIT_INPUT),
        (StageError("trajectories", MinSnapSolveError(3, 1e18)), EXIT_UNEXPECTED),
        (RuntimeError("boom"), EXIT_UNEXPECTED),
    ],
)
def test_exit_code_for(exc: BaseException, code: int) -> None:
    assert exit_code_for(exc) == code


def test_parser_defaults() -> None:
    args = build_parser().parse_args(["plan", "--scenario", "s.json", "--out", "out"])
    assert args.seed == 0
    assert args.dt == 0.05
    assert args.max_replan_rounds == 10
    assert args.ipso_iters is None
    assert not args.no_inject


def test_plan_then_validate(tmp_path: Path, corridor: Path, capsys) -> None:
    out_dir = tmp_path / "out"
    code = _exit_code(["plan", "--scenario", str(corridor), "--out", str(out_dir), *FAST])

    assert code == EXIT_OK
    assert "Makespan (planned):   12.000 s" in capsys.readouterr().out
    assert (out_dir / "result.json").exists()
    log_text = (out_dir / "mission-planner.log").read_text(encoding="utf-8")
    assert "Command line: drone-mission-planner plan" in log_text
    assert "Stage optimize: done" in log_text

    assert _exit_code(["validate", "--scenario", str(corridor), "--out", str(out_dir)]) == EXIT_OK


def test_quiet_plan_prints_nothing(tmp_path: Path, corridor: Path, capsys) -> None:
    code = _exit_code(["plan", "--scenario", str(corridor), "--out", str(tmp_path / "q"), "--quiet", *FAST])
    assert code == EXIT_OK
    assert capsys.readouterr().out == ""


def test_validate_fails_on_edited_scenario(tmp_path: Path, corridor: Path, capsys) -> None:
    out_dir = tmp_path / "out"
    assert _exit_code(["plan", "--scenario", str(corridor), "--out", str(out_dir), "--quiet", *FAST]) == EXIT_OK
    corridor.write_text(corridor.read_text(encoding="utf-8") + " ", encoding="utf-8")

    assert _exit_code(["validate", "--scenario", str(corridor), "--out", str(out_dir)]) == EXIT_SAFETY
    assert "Error: [validate] scenario MD5 does not match result.json" in capsys.readouterr().err


def test_missing_scenario_is_input_error(tmp_path: Path, capsys) -> None:
    code = _exit_code(["plan", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")])
    assert code == EXIT_INPUT
    assert capsys.readouterr().err.startswith("Error: [scenario] Scenario file not found")


def test_invalid_scenario_is_input_error(tmp_path: Path, write_scenario, scenario_doc, capsys) -> None:
    doc = scenario_doc()
    doc["safety"]["phi"] = 0.5
    code = _exit_code(["plan", "--scenario", str(write_scenario(doc)), "--out", str(tmp_path / "out")])
    assert code == EXIT_INPUT
    assert "inflation_factor" in capsys.readouterr().err


def test_unreachable_goals_are_infeasible(tmp_path: Path, write_scenario, scenario_doc) -> None:
    doc = scenario_doc(
        obstacles=[{"min": [4.0, -1.0, -1.0], "max": [6.0, 5.0, 2.0]}],
        goals=[[8.5, 3.5, 0.5]],
    )
    code = _exit_code(["plan", "--scenario", str(write_scenario(doc)), "--out", str(tmp_path / "out"), *FAST])
    assert code == EXIT_INFEASIBLE


def test_oracle_subcommand(tmp_path: Path, corridor: Path, capsys) -> None:
    out_dir = tmp_path / "oracle"
    assert _exit_code(["oracle", "--scenario", str(corridor), "--out", str(out_dir), "--threads", "2"]) == EXIT_OK
    assert "Optimal makespan: 12.000000 s (16 optimal plans)" in capsys.readouterr().out
    doc = json.loads((out_dir / "oracle.json").read_text(encoding="utf-8"))
    assert doc["nodes_enumerated"] == 5040


def test_oracle_rejects_large_instances(tmp_path: Path, corridor: Path, capsys) -> None:
    argv = ["oracle", "--scenario", str(corridor), "--out", str(tmp_path / "o"), "--max-goals", "3"]
    assert _exit_code(argv) == EXIT_INFEASIBLE
    assert capsys.readouterr().err.startswith("Error: [oracle]")


def test_matrices_subcommand(tmp_path: Path, corridor: Path) -> None:
    out_dir = tmp_path / "m"
    assert _exit_code(["matrices", "--scenario", str(corridor), "--out", str(out_dir), "--threads", "2"]) == EXIT_OK
    assert (out_dir / "matrices_rg.csv").exists()
    assert (out_dir / "matrices_gg.csv").exists()
