"""
Exception hierarchy for the numerical core and the pipelines
"""
from typing import Any, Optional


class PSFlowError(Exception):
    """Base class for every error raised by psflow"""


class ParameterDomainError(PSFlowError, ValueError):
    """Exponents, tolerances or profile parameters outside their admissible range"""


class GeometryError(PSFlowError, ValueError):
    """Grid mismatch, empty region or a point outside the domain"""


class DegenerateInitialDataError(PSFlowError, ValueError):
    """Initial data identically zero (cannot be normalized)"""


class StepFailureError(PSFlowError, RuntimeError):
    """Newton did not converge within its iteration budget"""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class IncompleteRunError(PSFlowError, RuntimeError):
    """The step cap was reached before extinction; carries the partial store"""

    def __init__(self, message: str, store: Any = None):
        super().__init__(message)
        self.store = store


class DataIntegrityError(PSFlowError, ValueError):
    """Stored samples violate a structural property (ordering, monotonicity)"""


class IntegratorInconsistencyError(PSFlowError, RuntimeError):
    """The two routes of the time map disagree beyond tolerance"""

    def __init__(self, message: str, discrepancy: float = float("nan")):
        super().__init__(message)
        self.discrepancy = discrepancy


class TimeRangeError(PSFlowError, ValueError):
    """Requested time lies outside the computed range"""


class InvariantFailureError(PSFlowError, AssertionError):
    """A checked identity or bound failed; carries the report that failed"""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class ConfigError(PSFlowError, ValueError):
    """Run configuration could not be parsed or validated"""

    def __init__(self, message: str, section: Optional[str] = None,
                 key: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if section:
            location = f"[{section}]"
            if key:
                location += f" {key}"
            if line:
                location += f" (line {line})"
            location += ": "
        super().__init__(f"{location}{message}")
        self.section = section
        self.key = key
        self.line = line
