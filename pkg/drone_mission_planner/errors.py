"""
Exception hierarchy for the mission planner.

Each pipeline stage raises one of these; the CLI maps them onto exit codes.
"""

from typing import List, Optional


class MissionPlannerError(Exception):
    """Base class for all planner errors."""


class ScenarioParseError(MissionPlannerError, ValueError):
    """Scenario file is not valid JSON or does not follow the schema."""

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ScenarioValidationError(MissionPlannerError, ValueError):
    """Scenario parsed but violates one or more invariants."""

    def __init__(self, violations: List[str]) -> None:
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


class GridTooLargeError(MissionPlannerError, MemoryError):
    """Requested voxel grid exceeds the configured cell cap."""


class OutOfBoundsError(MissionPlannerError, ValueError):
    """A world point lies outside the grid bounds."""


class BlockedEndpointError(MissionPlannerError, ValueError):
    """A search was requested from or to a blocked cell."""


class EmptyProblemError(MissionPlannerError, ValueError):
    """Nothing is left to plan after unreachable entities were filtered."""


class OracleSizeError(MissionPlannerError, ValueError):
    """Instance is too large for exhaustive enumeration."""


class MinSnapSolveError(MissionPlannerError, ArithmeticError):
    """The minimum-snap KKT system could not be solved."""

    def __init__(self, segment_count: int, condition: float, detail: str = "") -> None:
        self.segment_count = segment_count
        self.condition = condition
        message = (
            f"singular KKT system for {segment_count} segment(s) "
            f"(condition estimate {condition:.3e})"
        )
        if detail:
            message += f": {detail}"
        super().__init__(message)


class RetimeInfeasibleError(MissionPlannerError):
    """Dynamic limits are still violated after the maximum number of retime rounds."""


class ReplanFailure(MissionPlannerError):
    """Local replanning could not produce a detour for a violation."""

    def __init__(self, message: str, violation: object = None) -> None:
        self.violation = violation
        super().__init__(message)


class StageError(MissionPlannerError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
