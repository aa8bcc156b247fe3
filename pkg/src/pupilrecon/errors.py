"""Exception hierarchy shared by all modules.

Each exception carries the process exit code the CLI should use when it
escapes to the top level.
"""


class PupilReconError(Exception):
    """Base class for library errors."""

    exit_code = 1


class ParameterError(PupilReconError, ValueError):
    """Invalid parameter value or inconsistent arguments."""

    exit_code = 2


class DimensionError(ParameterError):
    """Array shape does not satisfy an operation's grid requirements."""


class ConfigError(ParameterError):
    """Malformed or incomplete pipeline configuration."""


class NonConvergenceError(PupilReconError, RuntimeError):
    """An iterative solver diverged.

    Parameters
    ----------
    message : str
        Human readable description.
    best : object, optional
        Best iterate found before divergence was detected.
    """

    exit_code = 3

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DataIOError(PupilReconError, OSError):
    """Failure reading or writing an on-disk artifact."""

    exit_code = 4
