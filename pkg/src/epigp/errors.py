"""Exception hierarchy shared across the toolkit."""


class EpiGPError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(EpiGPError):
    """Bad user input: malformed configs, invalid arguments, missing files.

    CLI maps this to exit code 2.
    """


class ModelValidationError(ConfigurationError):
    """A disease transition model violates a structural invariant."""


class KernelParseError(ConfigurationError):
    """Kernel spec string failed to parse; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class NumericalError(EpiGPError):
    """Numerical failure (ill-conditioned factorization after jitter escalation)."""


class DegenerateFieldError(EpiGPError):
    """A spatial field has zero variance; Moran's I is undefined."""
