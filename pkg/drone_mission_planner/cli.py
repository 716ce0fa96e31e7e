"""
Command-line interface for the drone mission planner.
"""

import argparse
import json
import sys
import traceback
from pathlib import Path
from typing import List, Optional

from drone_mission_planner import __version__
from drone_mission_planner.errors import (
    EmptyProblemError,
    GridTooLargeError,
    OracleSizeError,
    RetimeInfeasibleError,
    ScenarioParseError,
    ScenarioValidationError,
    StageError,
)
from drone_mission_planner.output import LOG_FILE, get_formatter
from drone_mission_planner.pipeline import (
    RunConfig,
    build_matrices_only,
    default_threads,
    run_oracle,
    run_pipeline,
    validate_outputs,
)
from drone_mission_planner.run_log import RunLog

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_SAFETY = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception (or the cause inside a StageError) to a process exit code."""
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, (EmptyProblemError, OracleSizeError, RetimeInfeasibleError, GridTooLargeError)):
        return EXIT_INFEASIBLE
    if isinstance(
        cause,
        (ScenarioParseError, ScenarioValidationError, json.JSONDecodeError, FileNotFoundError, OSError),
    ):
        return EXIT_INPUT
    return EXIT_UNEXPECTED


def _add_common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument(
        "--scenario",
        type=str,
        required=True,
        help="Path to the scenario JSON file",
    )
    parser.add_argument(
        "--out",
        type=str,
        required=out_required,
        default=None,
        help="Output directory for result files and mission-planner.log",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Echo log lines to stderr",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=default_threads(),
        help="Worker threads for independent searches and evaluations (default: CPU count)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drone-mission-planner",
        description="Plan minimum-makespan closed tours for a drone team visiting goals among "
        "box obstacles, then produce smooth validated trajectories.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="Run the full planning pipeline")
    _add_common(plan)
    plan.add_argument("--seed", type=int, default=0, help="Random seed, unsigned 64-bit (default: 0)")
    plan.add_argument(
        "--dt",
        type=float,
        default=0.05,
        help="Sampling step in seconds for safety checks and trajectories.csv (default: 0.05)",
    )
    plan.add_argument("--ipso-iters", type=int, default=None, help="Maximum swarm iterations")
    plan.add_argument("--swarm", type=int, default=None, help="Swarm size")
    plan.add_argument(
        "--no-inject",
        action="store_true",
        help="Disable periodic MLA injection (plain PSO ablation)",
    )
    plan.add_argument(
        "--no-mla-seed",
        action="store_true",
        help="Start from a purely random swarm",
    )
    plan.add_argument(
        "--max-replan-rounds",
        type=int,
        default=10,
        help="Safety replanning rounds before giving up (default: 10)",
    )
    plan.add_argument(
        "--dump-grid",
        action="store_true",
        help="Also write grid.bin and grid.json",
    )
    plan.add_argument("--quiet", action="store_true", help="Do not print the summary")

    oracle = sub.add_parser("oracle", help="Exhaustive optimum for small scenarios (at most 8 goals)")
    _add_common(oracle)
    oracle.add_argument("--max-goals", type=int, default=8, help="Goal limit for enumeration")

    validate = sub.add_parser("validate", help="Re-check an existing output directory")
    _add_common(validate)

    matrices = sub.add_parser("matrices", help="Write the travel cost matrices only")
    _add_common(matrices)
    return parser


def _run(args: argparse.Namespace, log: RunLog) -> int:
    out_dir = Path(args.out) if args.out else None
    scenario = Path(args.scenario)

    if args.command == "plan":
        cfg = RunConfig(
            out_dir=out_dir,
            seed=args.seed,
            dt=args.dt,
            ipso_iters=args.ipso_iters,
            swarm=args.swarm,
            inject=not args.no_inject,
            mla_seed=not args.no_mla_seed,
            threads=args.threads,
            max_replan_rounds=args.max_replan_rounds,
            dump_grid=args.dump_grid,
        )
        result = run_pipeline(scenario, cfg, log)
        if not args.quiet:
            print(get_formatter("text").format(result))
        if not result.safety.final_ok:
            print(
                f"Error: [safety] {len(result.safety.violations)} violations remain after "
                f"{result.safety.rounds_used} replan rounds",
                file=sys.stderr,
            )
        return result.exit_code

    if args.command == "oracle":
        result, _ = run_oracle(scenario, out_dir, log, args.max_goals, args.threads)
        print(f"Optimal makespan: {result.optimal_makespan:.6f} s ({len(result.plans)} optimal plans)")
        return EXIT_OK

    if args.command == "validate":
        check = validate_outputs(out_dir, scenario, log)
        for problem in check.problems:
            print(f"Error: [validate] {problem}", file=sys.stderr)
        return EXIT_OK if check.ok else EXIT_SAFETY

    build_matrices_only(scenario, out_dir, args.threads, log)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point for the CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_file = Path(args.out) / LOG_FILE if args.out else None
    log = RunLog(log_file, verbose=args.verbose)
    log(f"Command line: drone-mission-planner {' '.join(argv if argv is not None else sys.argv[1:])}")

    try:
        code = _run(args, log)
    except StageError as exc:
        error_msg = f"Error: {exc}"
        log(error_msg)
        print(error_msg, file=sys.stderr)
        if args.verbose:
            log(traceback.format_exc())
        sys.exit(exit_code_for(exc))
    except (FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        error_msg = f"Error: {exc}"
        log(error_msg)
        print(error_msg, file=sys.stderr)
        sys.exit(exit_code_for(exc) if exit_code_for(exc) != EXIT_UNEXPECTED else EXIT_INPUT)
    except Exception as exc:  # pylint: disable=broad-exception-caught
        error_msg = f"Unexpected error: {exc}"
        log(error_msg)
        print(error_msg, file=sys.stderr)
        if args.verbose:
            log(traceback.format_exc())
            traceback.print_exc()
        sys.exit(EXIT_UNEXPECTED)
    sys.exit(code)


if __name__ == "__main__":
    main()
