"""Exception hierarchy shared across the toolkit.

Each branch maps to one CLI exit code: validation-style failures exit 2,
backend transport failures exit 3, malformed backend responses exit 4.
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GATEWAY = 3
EXIT_PROTOCOL = 4


class MugpipeError(Exception):
    """Base class for all toolkit errors."""

    exit_code = EXIT_VALIDATION


class ValidationError(MugpipeError):
    """Invalid user input: bad config, bad dataset, unmet precondition."""

    exit_code = EXIT_VALIDATION


class ConfigError(ValidationError):
    """Bad configuration value (thresholds, tables, endpoints)."""


class IngestionError(ValidationError):
    """Dataset file violates the subject-records schema."""


class UsageError(ValidationError):
    """An operation was called with arguments violating its contract."""


class ScoringError(ValidationError):
    """Scoring is impossible (no usable categories / empty input)."""


class PromptError(ValidationError):
    """A prompt cannot be built from the given record."""


class EvaluationError(ValidationError):
    """Re-identification evaluation input is unusable (e.g. empty group)."""


class GatewayError(MugpipeError):
    """A model backend could not be reached or refused the request."""

    exit_code = EXIT_GATEWAY


class ProtocolError(MugpipeError):
    """A model backend answered with a malformed or inconsistent response."""

    exit_code = EXIT_PROTOCOL
