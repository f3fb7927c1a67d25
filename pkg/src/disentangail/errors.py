"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Unknown realm/variant, inconsistent run configuration, missing inputs."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class UsageError(RuntimeError):
    """An object was used in a state that does not allow the call."""


class DivergenceError(RuntimeError):
    """Training produced non-finite losses."""
