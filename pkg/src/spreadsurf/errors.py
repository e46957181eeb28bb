"""Exception hierarchy shared by all modules."""


class SpreadSurfError(Exception):
    """Base class for library errors."""


class DataError(SpreadSurfError, ValueError):
    """Input data is malformed (non-finite values, wrong shape)."""


class UsageError(SpreadSurfError, ValueError):
    """An operation was called outside its admissible arguments."""


class RangeError(SpreadSurfError, ArithmeticError):
    """A pointwise map overflowed."""


class ModelError(SpreadSurfError):
    """A coefficient or state violates a model requirement."""


class DomainError(SpreadSurfError, ValueError):
    """Evaluation requested outside the branch where a condition applies."""


class ConfigError(SpreadSurfError):
    """Configuration could not be parsed or validated."""

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class NumericalError(SpreadSurfError):
    """A simulation became numerically invalid."""

    def __init__(self, message, path_index=None, time=None):
        self.path_index = path_index
        self.time = time
        ctx = []
        if path_index is not None:
            ctx.append(f"path {path_index}")
        if time is not None:
            ctx.append(f"t={time:.6g}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)


class BlowUpError(NumericalError):
    """Surface became non-finite after a step."""


class ThinningBoundError(NumericalError):
    """Observed loss intensity exceeded the declared thinning bound."""
