"""Exception hierarchy shared by the library and the CLI.

Each class carries a stable ``code`` string; the CLI maps codes to exit
statuses and machine-readable error reports.
"""


class DoseSensError(Exception):
    """Base class for all errors raised by this package."""

    code = "internal-error"
    exit_status = 1


class ConfigError(DoseSensError):
    """Invalid options, incompatible flags, malformed configuration."""

    code = "config-error"
    exit_status = 2


class DataError(DoseSensError):
    """Malformed or out-of-range input data."""

    code = "data-error"
    exit_status = 3


class SolverError(DoseSensError):
    """A numeric search failed to bracket or converge."""

    code = "solver-error"
    exit_status = 4
