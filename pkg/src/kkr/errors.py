"""Exception and warning types shared across the package."""


class KKRError(Exception):
    """Base class for all package errors."""


class NonFinite(KKRError, ArithmeticError):
    """An integrated state or computed quantity left the finite range."""


class ParseError(KKRError, ValueError):
    """A data file could not be parsed.

    Carries the 1-based line number of the offending row.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(KKRError, ValueError):
    """A data file parsed but its columns or layout are inconsistent."""


class DimensionMismatch(KKRError, ValueError):
    pass


class SingularGram(KKRError, ArithmeticError):
    """The regularized Gram system could not be solved."""


class KernelOverflow(KKRError, OverflowError):
    """Unnormalized pullback weights overflowed for an eigenvalue near zero."""


class ConfigError(KKRError, ValueError):
    pass


class HorizonWarning(UserWarning):
    """Forecast requested beyond the horizon the model was trained on."""


class RankDeficient(UserWarning):
    """Requested EDMD rank exceeds the numerical rank of the input Gram."""
