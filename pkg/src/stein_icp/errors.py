"""Exception taxonomy.

Two families matter to callers: bad input (files, configs, shapes) and
numerical failure during a run. The CLI maps the first to exit code 2 and
the second to exit code 1.
"""

from __future__ import annotations


class RegistrationError(Exception):
    """Base class for all package-specific errors."""


class InputError(RegistrationError):
    """Invalid user input: files, configuration values, shapes."""


class CloudParseError(InputError):
    """A point cloud file could not be parsed. Message carries line context."""


class NumericalError(RegistrationError):
    """A computation failed numerically."""


class DivergedError(NumericalError):
    """An optimizer run produced non-finite parameters."""


class MatchRejectionError(NumericalError):
    """Every correspondence in a batch was rejected (clouds do not overlap)."""
