"""Exception hierarchy shared across the package."""


class SteinBanditError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SteinBanditError, ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(SteinBanditError, RuntimeError):
    """A computation produced non-finite or otherwise unusable values."""


class AllArmsDiverged(SteinBanditError, RuntimeError):
    """Every competing sampler configuration diverged; no winner exists."""


class ConfigError(SteinBanditError, ValueError):
    """A run-configuration file failed strict validation."""
