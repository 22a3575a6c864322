"""Exception types shared across the library."""


class UnmixError(Exception):
    """Base class for all library errors."""


class InputError(UnmixError):
    """Malformed or inconsistent input data."""


class ParameterError(UnmixError):
    """Parameter outside its documented domain."""


class NumericError(UnmixError):
    """Non-finite values or an unrecoverable numerical state."""


class InitError(UnmixError):
    """Initialization failure; the message names the failing step."""


class ExtractionError(UnmixError):
    """Endmember extraction could not produce the requested factors."""


class MetricError(UnmixError):
    """Metric undefined for the given inputs."""
