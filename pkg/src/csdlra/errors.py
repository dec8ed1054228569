"""Exception types shared across the package."""


class CsdError(Exception):
    """Base class for all package errors."""


class ConfigError(CsdError, ValueError):
    """Invalid configuration or input file.

    ``location`` names the offending key or line, e.g. ``"[grid] nx"``.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class NumericalError(CsdError, FloatingPointError):
    """Non-finite values or a violated step-size condition during a solve."""


class RunAborted(CsdError, RuntimeError):
    """A march stopped early; ``snapshot`` points at the saved state (or None)."""

    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot
        if snapshot is not None:
            message = f"{message} (snapshot: {snapshot})"
        super().__init__(message)
