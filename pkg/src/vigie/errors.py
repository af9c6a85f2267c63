"""Exception hierarchy for vigie.

The CLI maps these to stable exit codes (see cli.py).
"""


class VigieError(Exception):
    """Base class for all vigie errors."""


class DomainError(VigieError, ValueError):
    """Invalid parameter for a family, or an observation outside its support."""


class ConfigError(VigieError, ValueError):
    """A configuration value failed validation.

    Args:
        field: Name of the offending configuration key (e.g. "alt_values").
        message: What is wrong with it.
    """

    def __init__(self, field: str | None, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class ConfigParseError(ConfigError):
    """The configuration file could not be read or is not well formed."""


class PolicyStateError(VigieError, RuntimeError):
    """A policy was driven in a way its current state does not allow."""


class ReportError(VigieError):
    """A Monte Carlo run produced nothing that can be aggregated."""
