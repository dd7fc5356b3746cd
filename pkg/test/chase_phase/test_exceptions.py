from src.chase_phase.exceptions import (
    ChaseEscapeError,
    EnumerationLimitError,
    InsufficientDataError,
    InvalidParameterError,
    InvalidProfileError,
    InvariantViolationError,
    NonMonotoneVerdictError,
    NumericalUnderflowError,
    PreconditionError,
)


def test_every_error_derives_from_the_base():
    errors = [
        InvalidProfileError("rho.tail"),
        InvalidParameterError("d", 1),
        PreconditionError("no flip"),
        NonMonotoneVerdictError([(0.1, "ExpectedCoexistence")]),
        EnumerationLimitError(30, 24),
        InsufficientDataError("short table"),
        NumericalUnderflowError(200, "float"),
        InvariantViolationError(3, "bad"),
    ]
    for error in errors:
        assert isinstance(error, ChaseEscapeError)
        assert isinstance(error, Exception)


def test_invalid_profile_error_message():
    """Test InvalidProfileError location formatting."""
    error = InvalidProfileError("lambda.head", 2, "negative rate -1", line=4)
    assert error.field == "lambda.head"
    assert error.index == 2
    assert error.line == 4
    assert error.detail == "negative rate -1"
    assert str(error) == "Invalid profile field lambda.head[2] (line 4): negative rate -1"


def test_invalid_profile_error_default_message():
    assert str(InvalidProfileError("rho")) == "Invalid profile field rho"


def test_invalid_parameter_error_is_value_error():
    error = InvalidParameterError("tol", -1.0, "tolerance must be positive")
    assert isinstance(error, ValueError)
    assert error.name == "tol"
    assert error.value == -1.0
    assert str(error) == "Invalid value for tol: -1.0 (tolerance must be positive)"


def test_non_monotone_verdict_error_lists_probes():
    probes = [(0.1, "NoExpectedCoexistence"), (0.2, "ExpectedCoexistence"), (0.3, "NoExpectedCoexistence")]
    error = NonMonotoneVerdictError(probes)
    assert isinstance(error, PreconditionError)
    assert error.probes == probes
    assert "t=0.2:ExpectedCoexistence" in str(error)


def test_enumeration_and_underflow_messages():
    assert "k=30" in str(EnumerationLimitError(30, 24))
    error = NumericalUnderflowError(250, "float")
    assert error.k == 250
    assert "'log'" in str(error)


def test_invariant_violation_error():
    error = InvariantViolationError(12, "capture of non-red vertex (2, 0)")
    assert error.event_index == 12
    assert str(error) == "Event 12: capture of non-red vertex (2, 0)"
