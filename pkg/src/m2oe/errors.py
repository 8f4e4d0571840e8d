"""Exception hierarchy shared by every layer of the package."""


class M2oEError(Exception):
    """Base class; the CLI maps these to exit code 2 unless noted."""


class ShapeError(M2oEError, ValueError):
    pass


class ConfigError(M2oEError, ValueError):
    pass


class ValidationError(M2oEError, ValueError):
    pass


class ParseError(ValidationError):
    pass


class DegenerateMaskError(M2oEError, ValueError):
    pass


class DegenerateRoutingError(M2oEError, ArithmeticError):
    pass


class DeterminismError(M2oEError, RuntimeError):
    pass


class FormatError(M2oEError, ValueError):
    pass


class DivergenceError(M2oEError, ArithmeticError):
    """Training produced a non-finite loss (CLI exit code 3)."""
