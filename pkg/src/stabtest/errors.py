class StabTestError(Exception):
    pass


class ConfigurationError(StabTestError, ValueError):
    """Invalid distribution, learner, region or experiment configuration."""


class PreconditionError(StabTestError, ValueError):
    pass


class EnumerationCapError(StabTestError):
    """Exact enumeration would exceed the configured cap."""


class PartitionError(StabTestError, ValueError):
    pass


class InterfaceViolation(StabTestError):
    """A strategy tried to read a fitted model it is not allowed to see."""
