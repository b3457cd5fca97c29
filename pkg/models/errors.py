"""Error hierarchy shared by every layer of the lab.

Exit codes used by the CLI:
- ConfigError        -> 1
- PreconditionError  -> 2
- NumericError       -> 3
"""
from typing import Any, Dict, List, Optional


class LabError(Exception):
    exit_code = 3


class ConfigError(LabError):
    exit_code = 1

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class PreconditionError(LabError):
    exit_code = 2


class DomainError(PreconditionError):
    pass


class RangeError(PreconditionError):
    pass


class UnsupportedError(PreconditionError):
    pass


class DegenerateInputError(PreconditionError):
    pass


class ModelValidationError(PreconditionError):
    """A dependence model or chain violates its structural constraints."""

    def __init__(self, message: str, entry: Any = None):
        super().__init__(message)
        self.entry = entry


class NumericError(LabError):
    exit_code = 3


class ConvergenceError(NumericError):
    def __init__(self, message: str, x: float, last_iterate: float):
        super().__init__(message)
        self.x = x
        self.last_iterate = last_iterate


class OscillationError(ConvergenceError):
    pass


class QuadratureError(NumericError):
    def __init__(self, message: str, panels: Optional[List[Dict[str, float]]] = None):
        super().__init__(message)
        self.panels = panels or []
