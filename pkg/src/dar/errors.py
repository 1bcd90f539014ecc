"""Exception hierarchy shared across the package.

Three branches matter operationally: configuration problems, data problems
(manifests, volume files, label vectors), and everything else.  The CLI maps
each branch to a distinct exit code.
"""


class DarError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DarError):
    """Invalid configuration value or unresolvable experiment config."""


class DataError(DarError):
    """Malformed or inconsistent input data."""


class ManifestError(DataError):
    """Manifest parse/validation failure; carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VolumeFormatError(DataError):
    """Volume file does not conform to the NVOL binary layout."""


class ShapeError(DarError):
    """Array shape violates an operation's contract."""
