# errors.py
# Exception types shared by every layer. app.py maps these onto exit codes.


class FgbaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(FgbaError, ValueError):
    """An input lies outside its admissible range (non-positive rate, empty grid, ...)."""


class DimensionMismatchError(FgbaError, ValueError):
    pass


class UnsupportedModeError(FgbaError, ValueError):
    pass


class DegenerateModelError(FgbaError):
    """The phase model has more than one stationary distribution."""


class GeneratorError(FgbaError):
    """A matrix handed to the solver is not a CTMC generator."""


class NumericalFailure(FgbaError):
    pass


class ConfigError(FgbaError):
    """Configuration problem. Carries the dotted field path and source line when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + str(message))


class FgbaWarning(UserWarning):
    """Numerical warnings (degenerate model, RK4 drift, negative mass)."""
