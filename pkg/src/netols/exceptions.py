"""Exception hierarchy shared by the library and the command line."""


class NetOLSError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class InputError(NetOLSError, ValueError):
    """Malformed or out-of-range input (bad indices, bad parameters)."""

    exit_code = 2


class SchemaError(InputError):
    """A data file does not match what the configuration asks for."""


class FitError(NetOLSError):
    """The regression could not be fit, e.g. a rank-deficient design."""


class NumericError(NetOLSError):
    """A numerical precondition failed (singular system, bad transform)."""
