"""
Exception hierarchy for the quantile metamodel toolkit.

All errors raised on purpose by the package derive from ``QfeiError`` so
callers can catch the whole family at once.  The command-line interface
maps the three main branches to exit codes:

* ``ConfigError``     -> 2
* ``SimulatorError``  -> 3
* ``NumericalError``  -> 4
"""

from __future__ import annotations

from typing import Any, Optional, Sequence


class QfeiError(Exception):
    """Base exception for quantile metamodel runtime errors."""
    pass


class ConfigError(QfeiError, ValueError):
    """Raised when a run configuration is invalid."""
    pass


class DomainError(QfeiError, ValueError):
    """Raised when an argument lies outside its mathematical domain."""
    pass


class EmptySampleError(QfeiError, ValueError):
    """Raised when an empirical quantile is requested from no draws."""
    pass


class DuplicateInputError(QfeiError, ValueError):
    """Raised when a design holds the same input twice."""
    pass


class CandidatesExhausted(QfeiError):
    """Signal that every candidate input has already been evaluated."""
    pass


class SimulatorError(QfeiError):
    """Raised when a simulator cannot deliver draws.

    Parameters
    ----------
    message : str
        Human readable description.
    x : sequence of float, optional
        The input at which the simulator failed.
    diagnostics : str, optional
        Captured output of the failing process, if any.
    """

    def __init__(self, message: str, x: Optional[Sequence[float]] = None,
                 diagnostics: Optional[str] = None):
        self.message = message
        self.x = None if x is None else tuple(float(v) for v in x)
        self.diagnostics = diagnostics
        text = message
        if self.x is not None:
            text = f"{text} (input x={list(self.x)})"
        if diagnostics:
            text = f"{text}\n--- simulator diagnostics ---\n{diagnostics}"
        super().__init__(text)


class ReplayError(SimulatorError):
    """Raised when a replay table has no (more) draws for an input."""
    pass


class SimulatorTimeoutError(SimulatorError):
    """Raised when an external simulator does not answer in time."""
    pass


class MalformedResponseError(SimulatorError):
    """Raised when an external simulator answers with an invalid payload."""
    pass


class NumericalError(QfeiError):
    """Base class for numerical failures."""
    pass


class GridMismatchError(NumericalError, ValueError):
    """Raised when curves defined on different probability grids are combined."""
    pass


class RankError(NumericalError):
    """Raised when a basis cannot be extended or its Gram matrix is singular.

    Parameters
    ----------
    message : str
        Description of the failure.
    achievable_k : int, optional
        Largest basis size that could be built from the data.
    """

    def __init__(self, message: str, achievable_k: Optional[int] = None):
        self.achievable_k = achievable_k
        if achievable_k is not None:
            message = f"{message} (achievable k={achievable_k})"
        super().__init__(message)


class ZeroNormError(NumericalError, ZeroDivisionError):
    """Raised when a relative error is requested for a zero-norm curve."""
    pass


class DegenerateObjectiveError(NumericalError):
    """Raised when the objective values have zero range."""
    pass


class IllConditionedError(NumericalError):
    """Raised when a correlation matrix cannot be factorized."""
    pass


class FitError(NumericalError):
    """Raised when hyperparameter estimation fails on every start."""

    def __init__(self, message: str, diagnostics: Optional[Any] = None):
        self.diagnostics = diagnostics
        if diagnostics is not None:
            message = f"{message}: {diagnostics}"
        super().__init__(message)


class TransformDomainError(NumericalError, ValueError):
    """Raised when coefficients fall outside the log-shift transform domain."""
    pass


def exit_code_for(error: BaseException) -> int:
    """Return the CLI exit code associated with an exception."""
    if isinstance(error, ConfigError):
        return 2
    if isinstance(error, SimulatorError):
        return 3
    if isinstance(error, NumericalError):
        return 4
    return 1


__all__ = [
    "QfeiError",
    "ConfigError",
    "DomainError",
    "EmptySampleError",
    "DuplicateInputError",
    "CandidatesExhausted",
    "SimulatorError",
    "ReplayError",
    "SimulatorTimeoutError",
    "MalformedResponseError",
    "NumericalError",
    "GridMismatchError",
    "RankError",
    "ZeroNormError",
    "DegenerateObjectiveError",
    "IllConditionedError",
    "FitError",
    "TransformDomainError",
    "exit_code_for",
]
