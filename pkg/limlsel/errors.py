"""
Exception hierarchy for limlsel.

Each error class carries the process exit code the CLI reports for it.
"""


class LimlselError(Exception):
    """Base class for all limlsel errors."""

    exit_code = 1


class ConfigError(LimlselError):
    """Invalid configuration file, flag value or input file layout."""

    exit_code = 2


class DegenerateError(LimlselError):
    """A computation cannot proceed on the given data."""

    exit_code = 3


class RankDeficiencyError(DegenerateError):
    """A design matrix is not of full column rank."""


class SelectionError(DegenerateError):
    """No candidate fit converged, so nothing can be selected."""


class CalibrationError(LimlselError):
    """A copula parameter bracket could not be established."""

    exit_code = 4
