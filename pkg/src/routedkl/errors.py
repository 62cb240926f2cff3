"""Error types shared across the library.

Every class subclasses ValueError so callers that only know stdlib
semantics still get sensible behaviour; the CLI maps them to exit codes.
"""


class RoutedKlError(ValueError):
    """Base class for all library errors."""


class InvalidDistributionError(RoutedKlError):
    """Input is not a valid point on the probability simplex."""


class NonFiniteInputError(RoutedKlError):
    """Logits or other numeric inputs contain NaN or infinity."""


class InfeasibleFloorError(RoutedKlError):
    """p_min * top_k >= 1: no floored distribution exists."""


class UndefinedDivergenceError(RoutedKlError):
    """KL support violation: q is zero somewhere p is positive."""


class DimensionError(RoutedKlError):
    """Mismatched vector lengths or partition/rollout lengths."""


class RangeError(RoutedKlError):
    """Scalar argument outside its declared range."""


class SpanAlignmentError(RoutedKlError):
    """Token character intervals overlap or are out of order."""


class StepSizeError(RoutedKlError):
    """Euler step left the probability simplex."""


class EnumerationBudgetError(RoutedKlError):
    """Task too large for exact sequence enumeration."""


class InternalConsistencyError(RoutedKlError):
    """A runtime invariant that should hold by construction failed."""


class NumericFailureError(RoutedKlError):
    """Non-finite loss or other numeric breakdown during training."""


class ConfigError(RoutedKlError):
    """Run configuration is missing, malformed, or inconsistent."""
