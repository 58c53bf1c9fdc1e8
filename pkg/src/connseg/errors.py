"""Exception hierarchy shared by every module.

The CLI maps each family to its own exit code.
"""


class ConnsegError(Exception):
    exit_code = 1


class InputError(ConnsegError, ValueError):
    """Rejected input: bad shapes, out-of-range parameters, inconsistent data."""

    exit_code = 2


class NumericError(ConnsegError, FloatingPointError):
    """NaN/Inf encountered in activations, gradients or parameters."""

    exit_code = 3


class VolumeIOError(ConnsegError, OSError):
    exit_code = 4


class EmptyResultError(ConnsegError):
    """A stage produced nothing to work with (e.g. no air in a CT)."""

    exit_code = 5
