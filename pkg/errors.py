"""
Error hierarchy for neckflow.

Every error carries the CLI exit code it maps to and an optional
``details`` dict that ends up in the error record.
"""

from typing import Any, Dict, Optional


class NeckflowError(Exception):
    exit_code = 4

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class UsageError(NeckflowError):
    exit_code = 2


class InputFileError(NeckflowError):
    exit_code = 3


class DimensionError(NeckflowError):
    """Fields or operators with incompatible truncations or shapes."""


class DomainError(NeckflowError):
    """Argument outside the domain of a formula."""


class DegenerateModeError(DomainError):
    """Mode index on a branch the formula does not cover."""


class PreconditionError(NeckflowError):
    pass


class NumericalError(NeckflowError):
    """A solver or residual check failed."""


class IntegrationError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class GridError(NeckflowError):
    pass


class CompatibilityError(NeckflowError):
    pass


class ContractionError(NeckflowError):
    pass


class LinearizationError(NeckflowError):
    pass


class ConvergenceError(NeckflowError):
    """Series or iteration without a convergence guarantee."""


class ConsistencyError(NeckflowError):
    """Closed-form value disagrees with its numerical oracle."""
    exit_code = 5
