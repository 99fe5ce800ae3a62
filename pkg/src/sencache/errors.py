"""Exception hierarchy shared across the package."""


class SenCacheError(Exception):
    """Base class for all package errors."""


class DomainError(SenCacheError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(SenCacheError, ArithmeticError):
    """A non-finite value was passed in or produced."""


class DivergedTrajectoryError(NumericError):
    def __init__(self, step: int, sample: int | None = None):
        self.step = step
        self.sample = sample
        where = f"step {step}" if sample is None else f"sample {sample}, step {step}"
        super().__init__(f"trajectory diverged at {where}")


class UnsupportedOperationError(SenCacheError, NotImplementedError):
    """The field does not provide the requested analytic oracle."""


class ConfigError(SenCacheError, ValueError):
    """Invalid or inconsistent configuration."""


class PreconditionError(SenCacheError, ValueError):
    """An input object violates the operation's preconditions."""
