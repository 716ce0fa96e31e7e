"""
End-to-end planning pipeline and the other CLI workflows.

Stages run in order: scenario, grid, matrices, filter, optimize, trajectories,
safety, output. Any failure is re-raised as a StageError naming its stage.
"""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from drone_mission_planner import __version__
from drone_mission_planner.cost_matrices import (
    CostMatrices,
    FilteredProblem,
    build_cost_matrices,
    filter_unreachable,
    write_matrix_csv,
)
from drone_mission_planner.errors import EmptyProblemError, StageError
from drone_mission_planner.grid import build_grid, dump_occupancy
from drone_mission_planner.ipso import IpsoParams, OptimizeResult, optimize
from drone_mission_planner.minsnap import PiecewiseTrajectory
from drone_mission_planner.oracle import DEFAULT_MAX_GOALS, OracleResult, exhaustive_makespan
from drone_mission_planner.output import (
    CONVERGENCE_FILE,
    MATRICES_GG_FILE,
    MATRICES_RG_FILE,
    ORACLE_FILE,
    RESULT_FILE,
    SAFETY_FILE,
    SCHEMA_VERSION,
    TIMING_FILE,
    TRAJECTORIES_FILE,
    JSONFormatter,
    oracle_document,
    trajectory_from_document,
    write_convergence_csv,
    write_json,
    write_safety_csv,
    write_trajectories_csv,
)
from drone_mission_planner.plan import Plan
from drone_mission_planner.run_log import null_log
from drone_mission_planner.safety import (
    DEFAULT_CHECK_DT,
    DEFAULT_MAX_REPLAN_ROUNDS,
    ReplanContext,
    SafetyConfig,
    SafetyReport,
    check_separation,
    clearance_series,
    sample_on_grid,
    shared_time_grid,
    validate_loop,
)
from drone_mission_planner.scenario import Scenario, load_scenario
from drone_mission_planner.scenario_hash import ScenarioHashCache, calculate_file_hash
from drone_mission_planner.tours import RobotTour, build_robot_tour, mission_makespan

Log = Callable[[str], None]


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    """Settings of one `plan` run; None means "use the scenario or default value"."""

    out_dir: Optional[Path] = None
    seed: int = 0
    dt: float = DEFAULT_CHECK_DT
    ipso_iters: Optional[int] = None
    swarm: Optional[int] = None
    inject: bool = True
    mla_seed: bool = True
    threads: int = field(default_factory=default_threads)
    max_replan_rounds: int = DEFAULT_MAX_REPLAN_ROUNDS
    dump_grid: bool = False
    max_grid_cells: Optional[int] = None

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(eq=False)
class MissionResult:
    """Everything a `plan` run produced."""

    scenario: Scenario
    scenario_md5: Optional[str]
    seed: int
    problem: FilteredProblem
    plan: Plan
    params: IpsoParams
    optimization: OptimizeResult
    makespan_pre: float
    makespan_post: float
    tours: List[RobotTour]
    safety: SafetyReport
    check_dt: float
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def trajectories(self) -> List[PiecewiseTrajectory]:
        return [rt.trajectory for rt in self.tours]

    @property
    def convergence(self) -> List[float]:
        return self.optimization.history

    @property
    def params_document(self) -> Dict[str, Any]:
        return asdict(self.params)

    @property
    def exit_code(self) -> int:
        return 0 if self.safety.final_ok else 2


@contextmanager
def stage(name: str, timing: Dict[str, float], log: Log) -> Iterator[None]:
    """Time a stage and tag any failure with its name."""
    log(f"Stage {name}: start")
    started = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        log(f"Stage {name}: failed: {exc}")
        raise StageError(name, exc) from exc
    finally:
        timing[name] = time.perf_counter() - started
    log(f"Stage {name}: done in {timing[name]:.3f} s")


def _prepare(scenario_path: Path, timing: Dict[str, float], log: Log, threads: int, max_grid_cells: Optional[int] = None):
    with stage("scenario", timing, log):
        s = load_scenario(scenario_path)
        md5 = calculate_file_hash(scenario_path)
        log(f"Scenario {scenario_path}: {s.n_robots} robots, {s.n_goals} goals, md5 {md5}")
    with stage("grid", timing, log):
        g = build_grid(s, max_grid_cells)
        log(f"Grid {g.dims} at {g.resolution} m: {g.blocked_count}/{g.cell_count} cells blocked")
    with stage("matrices", timing, log):
        m = build_cost_matrices(g, s, threads, log)
    return s, md5, g, m


def _filter(m: CostMatrices, timing: Dict[str, float], log: Log) -> FilteredProblem:
    with stage("filter", timing, log):
        fp = filter_unreachable(m)
        for goal, reason in fp.dropped_goals:
            log(f"Dropped goal {goal}: {reason}")
        for robot, reason in fp.dropped_robots:
            log(f"Dropped robot {m.robot_ids[robot]}: {reason}")
        if len(fp.components) > 1:
            log(f"Reachability splits into {len(fp.components)} components")
    return fp


def write_matrices(out_dir: Path, m: CostMatrices) -> Tuple[Path, Path]:
    rg = write_matrix_csv(out_dir / MATRICES_RG_FILE, m.c_rg, m.robot_ids, m.goal_ids)
    gg = write_matrix_csv(out_dir / MATRICES_GG_FILE, m.c_gg, m.goal_ids, m.goal_ids)
    return rg, gg


def run_pipeline(scenario_path: Path, cfg: RunConfig, log: Log = null_log) -> MissionResult:
    """
    Plan a mission from a scenario file and write every output file.

    Args:
        scenario_path: Scenario JSON
        cfg: Run settings; outputs are written only when cfg.out_dir is set
        log: Log sink

    Returns:
        MissionResult

    Raises:
        StageError: Wrapping the failure of any stage
    """
    scenario_path = Path(scenario_path)
    timing: Dict[str, float] = {}
    log(f"drone-mission-planner {__version__}: plan {scenario_path} seed={cfg.seed} threads={cfg.threads}")
    s, md5, g, m = _prepare(scenario_path, timing, log, cfg.threads, cfg.max_grid_cells)
    if cfg.out_dir is not None:
        cache = ScenarioHashCache(cfg.out_dir)
        if cache.cached_hash() is not None and not cache.is_unchanged(scenario_path):
            log("Scenario changed since the previous run in this output directory")
        if cfg.dump_grid:
            dump_occupancy(g, cfg.out_dir / "grid")
    fp = _filter(m, timing, log)
    limits = s.dynamics

    with stage("optimize", timing, log):
        params = IpsoParams.from_scenario(
            s,
            max_iterations=cfg.ipso_iters,
            swarm_size=cfg.swarm,
            inject=cfg.inject,
            mla_seed=cfg.mla_seed,
        )
        opt = optimize(fp, fp.matrices, limits, params, cfg.seed, max_workers=cfg.threads, log=log)
        makespan_pre = opt.fitness
        if not math.isfinite(makespan_pre):
            raise EmptyProblemError("no feasible plan found: every candidate uses an unreachable leg")

    with stage("trajectories", timing, log):
        jobs = list(enumerate(opt.plan.tours))

        def _build(job: Tuple[int, Tuple[int, ...]]) -> RobotTour:
            return build_robot_tour(job[0], job[1], fp, s, g, limits)

        if cfg.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
                tours = list(executor.map(_build, jobs))
        else:
            tours = [_build(job) for job in jobs]
        for rt in tours:
            log(f"Robot {rt.robot_id}: {rt.waypoints.segment_count} segments, {rt.trajectory.duration:.3f} s")

    with stage("safety", timing, log):
        safety_cfg = SafetyConfig.from_scenario(s, cfg.dt, cfg.max_replan_rounds)
        ctx = ReplanContext(fp, s, g, limits, safety_cfg, log)
        tours, report = validate_loop(tours, ctx)
        makespan_post = mission_makespan(tours)

    result = MissionResult(
        scenario=s,
        scenario_md5=md5,
        seed=cfg.seed,
        problem=fp,
        plan=opt.plan,
        params=params,
        optimization=opt,
        makespan_pre=makespan_pre,
        makespan_post=makespan_post,
        tours=tours,
        safety=report,
        check_dt=cfg.dt,
        timing=timing,
    )
    if cfg.out_dir is not None:
        with stage("output", timing, log):
            for path in write_outputs(cfg.out_dir, result, m):
                log(f"Wrote {path}")
            if md5:
                ScenarioHashCache(cfg.out_dir).save(md5)
    return result


def write_outputs(out_dir: Path, result: MissionResult, m: CostMatrices) -> List[Path]:
    out_dir = Path(out_dir)
    ids = [rt.robot_id for rt in result.tours]
    paths = [
        write_json(out_dir / RESULT_FILE, JSONFormatter().format(result)),
        write_convergence_csv(out_dir / CONVERGENCE_FILE, result.optimization.history),
        write_trajectories_csv(out_dir / TRAJECTORIES_FILE, ids, result.trajectories, result.check_dt),
        write_safety_csv(out_dir / SAFETY_FILE, result.safety),
        *write_matrices(out_dir, m),
    ]
    paths.append(write_json(out_dir / TIMING_FILE, {k: round(v, 6) for k, v in result.timing.items()}))
    return paths


def run_oracle(
    scenario_path: Path,
    out_dir: Optional[Path] = None,
    log: Log = null_log,
    max_goals: int = DEFAULT_MAX_GOALS,
    threads: int = 1,
) -> Tuple[OracleResult, FilteredProblem]:
    """
    Exact optimum of a small scenario, written to oracle.json.

    Raises:
        StageError: Wrapping OracleSizeError when G_N exceeds max_goals
    """
    scenario_path = Path(scenario_path)
    timing: Dict[str, float] = {}
    log(f"drone-mission-planner {__version__}: oracle {scenario_path}")
    s, md5, _, m = _prepare(scenario_path, timing, log, threads)
    fp = _filter(m, timing, log)
    with stage("oracle", timing, log):
        result = exhaustive_makespan(fp, fp.matrices, s.dynamics, max_goals, threads)
        log(
            f"Oracle optimum {result.optimal_makespan:.6f} s, {len(result.plans)} optimal plans, "
            f"{result.nodes_enumerated} plans enumerated"
        )
    if out_dir is not None:
        path = write_json(Path(out_dir) / ORACLE_FILE, oracle_document(result, fp, md5))
        log(f"Wrote {path}")
    return result, fp


def build_matrices_only(scenario_path: Path, out_dir: Path, threads: int = 1, log: Log = null_log) -> CostMatrices:
    """Compute and write matrices_rg.csv and matrices_gg.csv."""
    timing: Dict[str, float] = {}
    log(f"drone-mission-planner {__version__}: matrices {scenario_path}")
    _, _, _, m = _prepare(Path(scenario_path), timing, log, threads)
    for path in write_matrices(Path(out_dir), m):
        log(f"Wrote {path}")
    return m


@dataclass
class OutputCheck:
    """Outcome of re-checking an output directory."""

    problems: List[str] = field(default_factory=list)
    min_separation: float = math.inf
    min_clearance: float = math.inf

    @property
    def ok(self) -> bool:
        return not self.problems


def _check_trajectory(robot_id: str, tr: PiecewiseTrajectory, problems: List[str]) -> None:
    residuals = tr.junction_residuals()
    limits = (1e-6, 1e-6, 1e-4)
    for name, value, limit in zip(("position", "velocity", "acceleration"), residuals[:3], limits):
        if value >= limit:
            problems.append(f"robot {robot_id}: {name} jump {value:.3e} at a junction")
    for t in (tr.t0, tr.t_f):
        for derivative, name in ((1, "velocity"), (2, "acceleration")):
            norm = float(np.linalg.norm(tr.evaluate(t, derivative)))
            if norm >= 1e-6:
                problems.append(f"robot {robot_id}: {name} {norm:.3e} at t={t:.3f} s, expected rest")
    ends = tr.evaluate(tr.knots, 0)
    gap = float(np.max(np.abs(ends - tr.waypoints.points)))
    if gap >= 1e-6:
        problems.append(f"robot {robot_id}: waypoints missed by {gap:.3e} m")


def validate_outputs(out_dir: Path, scenario_path: Path, log: Log = null_log) -> OutputCheck:
    """
    Re-check a result.json against its scenario.

    Trajectories are rebuilt from the stored coefficients; continuity and rest
    conditions are checked, then separation and clearance on a grid ten times
    finer than the one used for planning, with a v_max·dt/5 allowance.

    Raises:
        FileNotFoundError: If result.json or the scenario is missing
        json.JSONDecodeError: If result.json is not valid JSON
    """
    out_dir = Path(out_dir)
    check = OutputCheck()
    log(f"drone-mission-planner {__version__}: validate {out_dir}")
    result_path = out_dir / RESULT_FILE
    if not result_path.exists():
        raise FileNotFoundError(f"{result_path} not found")
    with open(result_path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    s = load_scenario(scenario_path)

    if doc.get("schema_version") != SCHEMA_VERSION:
        check.problems.append(f"unsupported schema_version {doc.get('schema_version')}")
        return check
    md5 = calculate_file_hash(Path(scenario_path))
    if doc.get("scenario_md5") != md5:
        check.problems.append("scenario MD5 does not match result.json")

    ids = [entry["robot_id"] for entry in doc["trajectories"]]
    trajs = [trajectory_from_document(entry) for entry in doc["trajectories"]]
    for robot_id, tr in zip(ids, trajs):
        _check_trajectory(robot_id, tr, check.problems)

    dt = float(doc["safety"]["check_dt"])
    fine = dt / 10.0
    tolerance = s.dynamics.v_max_drone * dt / 5.0
    cfg = SafetyConfig.from_scenario(s, fine)
    times = shared_time_grid(trajs, fine)
    states = [sample_on_grid(tr, times) for tr in trajs]
    _, min_sep = check_separation(states, cfg)
    min_clear = np.full(len(times), math.inf)
    for st in states:
        series, _ = clearance_series(st.positions, s.obstacles, s.safety_radius)
        min_clear = np.minimum(min_clear, series)
    check.min_separation = float(np.min(min_sep)) if len(min_sep) else math.inf
    check.min_clearance = float(np.min(min_clear)) if len(min_clear) else math.inf
    if check.min_separation < s.separation_min - tolerance:
        check.problems.append(f"min separation {check.min_separation:.4f} m below {s.separation_min:.4f} m")
    if check.min_clearance < s.clearance_margin - tolerance:
        check.problems.append(f"min clearance {check.min_clearance:.4f} m below {s.clearance_margin:.4f} m")
    for problem in check.problems:
        log(f"Validation problem: {problem}")
    log(f"Validation {'passed' if check.ok else 'failed'}")
    return check
