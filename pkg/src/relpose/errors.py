"""Exception hierarchy shared by the library and the command line."""


class RelPoseError(Exception):
    """Base class for all errors raised by relpose."""

    exit_code = 1


class ConfigurationError(RelPoseError, ValueError):
    """Inconsistent model, stage or command configuration."""

    exit_code = 3


class DataError(RelPoseError, ValueError):
    """Malformed, truncated or mismatched dataset / checkpoint content."""

    exit_code = 4


class NumericalError(RelPoseError, ArithmeticError):
    """Non-finite loss or a failed numerical audit."""

    exit_code = 5
