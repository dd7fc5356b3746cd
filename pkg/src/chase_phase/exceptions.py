"""Custom exceptions for chase-phase."""

from typing import Any, Optional


class ChaseEscapeError(Exception):
    """Base exception for chase-phase errors."""

    pass


class InvalidProfileError(ChaseEscapeError):
    """Raised when rate data is malformed or negative."""

    def __init__(
        self,
        field: str,
        index: Optional[int] = None,
        message: Optional[str] = None,
        line: Optional[int] = None,
    ):
        """
        Initialize InvalidProfileError.

        Args:
            field: Offending field, e.g. "lambda.head"
            index: 1-based index inside a head list, if applicable
            message: Optional custom error message
            line: Line number in the profile file, if known
        """
        self.field = field
        self.index = index
        self.line = line
        self.detail = message
        location = field if index is None else f"{field}[{index}]"
        if line is not None:
            location = f"{location} (line {line})"
        default_msg = f"Invalid profile field {location}"
        super().__init__(f"{default_msg}: {message}" if message else default_msg)


class InvalidParameterError(ChaseEscapeError, ValueError):
    """Raised when a numeric argument lies outside the operation's domain."""

    def __init__(self, name: str, value: Any, message: Optional[str] = None):
        self.name = name
        self.value = value
        default_msg = f"Invalid value for {name}: {value!r}"
        super().__init__(f"{default_msg} ({message})" if message else default_msg)


class PreconditionError(ChaseEscapeError):
    """Raised when an operation's precondition does not hold."""

    pass


class NonMonotoneVerdictError(PreconditionError):
    """Raised when phase verdicts along a scaling family are not monotone."""

    def __init__(self, probes: list, message: Optional[str] = None):
        """
        Args:
            probes: probe table as (scale, verdict name) pairs in scale order
            message: Optional custom error message
        """
        self.probes = probes
        table = ", ".join(f"t={t:.6g}:{v}" for t, v in probes)
        super().__init__(message or f"Verdict is not monotone along the scaling family: {table}")


class EnumerationLimitError(ChaseEscapeError):
    """Raised when brute-force Dyck enumeration is asked for more than the guard allows."""

    def __init__(self, k: int, limit: int):
        self.k = k
        self.limit = limit
        super().__init__(f"Dyck enumeration for k={k} exceeds the guard k <= {limit}")


class InsufficientDataError(ChaseEscapeError):
    """Raised when a Catalan table has too few usable entries for the root test."""

    pass


class NumericalUnderflowError(ChaseEscapeError):
    """Raised when floating arithmetic loses a term that is strictly positive."""

    def __init__(self, k: int, mode: str):
        self.k = k
        self.mode = mode
        super().__init__(
            f"C_{k} underflowed to 0 in {mode} mode although it is positive; "
            f"use 'log' or 'exact' mode"
        )


class InvariantViolationError(ChaseEscapeError):
    """Raised when a simulated or replayed event breaks the process rules."""

    def __init__(self, event_index: int, message: str):
        self.event_index = event_index
        super().__init__(f"Event {event_index}: {message}")
