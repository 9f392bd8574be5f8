"""Exception types raised across the package."""


class GPGError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GPGError, ValueError):
    """An argument violates an operation's precondition."""


class CorruptionError(GPGError):
    """A rollout buffer carries inconsistent episode markers."""


class ConfigError(GPGError, ValueError):
    """A configuration value or combination is not supported."""


class ResourceError(GPGError):
    """A requested computation exceeds a hard size guard."""


class NumericalError(GPGError, ArithmeticError):
    """A loss, ratio or gradient became non-finite.

    ``diagnostics`` holds whatever arrays were available at the failure point
    so that callers can dump them for inspection.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(GPGError):
    """A checkpoint could not be read or does not match the target."""
