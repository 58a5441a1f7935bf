"""
Error types shared by every phase of the pipeline
Each error carries the exit code the CLI reports for it
"""

from typing import Any, Dict, Optional


class PipelineError(Exception):
    """Base class for all toolkit errors"""

    exit_code: int = 1
    kind: str = "PipelineError"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = {k: v for k, v in details.items() if v is not None}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form written to stderr by the CLI"""
        return {
            "error": self.kind,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class RejectedInput(PipelineError):
    """Input violates an operation's contract"""

    exit_code = 5
    kind = "RejectedInput"

    def __init__(
        self,
        message: str,
        row: Optional[int] = None,
        column: Optional[str] = None,
        **details: Any,
    ):
        super().__init__(message, row=row, column=column, **details)
        self.row = row
        self.column = column


class ConvergenceFailure(PipelineError):
    """Iterative solver stopped without meeting its tolerance"""

    exit_code = 6
    kind = "ConvergenceFailure"

    def __init__(self, message: str, residual: Optional[float] = None, **details: Any):
        super().__init__(message, residual=residual, **details)
        self.residual = residual


class UndefinedMetric(PipelineError):
    """Metric has no value for this input (e.g. a single class or cluster)"""

    exit_code = 7
    kind = "Undefined"


class UsageError(PipelineError):
    """Unknown flag or malformed command line"""

    exit_code = 2
    kind = "UsageError"


class SchemaMismatch(PipelineError):
    """Versioned file written with another schema"""

    exit_code = 3
    kind = "SchemaMismatch"


class MissingInput(PipelineError):
    """Referenced input file does not exist"""

    exit_code = 4
    kind = "MissingInput"


__all__ = [
    "PipelineError",
    "RejectedInput",
    "ConvergenceFailure",
    "UndefinedMetric",
    "UsageError",
    "SchemaMismatch",
    "MissingInput",
]
