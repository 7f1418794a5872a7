"""Exception types shared across the package."""


class FtalignError(Exception):
    """Base class for all ftalign errors."""


class EmptySimplexError(FtalignError, ValueError):
    """Weight vector is empty."""


class NegativeEntryError(FtalignError, ValueError):
    """Weight vector has a negative entry."""


class NotNormalizedError(FtalignError, ValueError):
    """Weight vector does not sum to one within tolerance."""


class DimensionMismatchError(FtalignError, ValueError):
    """Operands have incompatible shapes."""


class ZeroNormError(FtalignError, ValueError):
    """Vector norm is too small to renormalize."""


class InfeasibleMarginalsError(FtalignError, ValueError):
    """Coupling violates its marginal constraints."""


class NumericalFailureError(FtalignError, ArithmeticError):
    """A solver failed to reach its required accuracy."""


class ConfigError(FtalignError, ValueError):
    """Invalid configuration value."""


class TooFewViewsError(FtalignError, ValueError):
    """Listing does not have enough views for the requested operation."""


class EmptyIndexError(FtalignError, ValueError):
    """Search over an index with no entries."""


class UnknownListingError(FtalignError, LookupError):
    """A referenced listing id is not present in the index."""


class MissingViewError(FtalignError, LookupError):
    """A listing lacks the requested view role."""


class FormatError(FtalignError, ValueError):
    """Malformed serialized data (bad magic, version, truncation, or content)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
