"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`GbcdcError`,
so callers (the CLI in particular) can separate input problems from numeric
failures without string matching.
"""

from __future__ import annotations


class GbcdcError(Exception):
    """Base class for all library errors."""


class InputError(GbcdcError):
    """Invalid input or configuration (maps to CLI exit code 2)."""


class NumericError(GbcdcError):
    """A computation could not be carried out (maps to CLI exit code 3)."""


class DomainError(InputError, ValueError):
    """An argument lies outside the domain of an operation."""


class IndivisibleError(InputError, ValueError):
    """The number of batches does not divide the sample size in strict mode."""


class DimensionMismatchError(InputError, ValueError):
    """Arrays or summaries disagree in shape."""


class SupportMismatchError(InputError, ValueError):
    """LASSO fits live on different supports where a common one is required."""


class DatasetFormatError(InputError, ValueError):
    """A dataset file is malformed."""


class ConfigError(InputError, ValueError):
    """An experiment configuration failed schema validation."""


class SingularGramError(NumericError, ArithmeticError):
    """A Gram matrix is numerically singular."""


class ConvergenceError(NumericError, ArithmeticError):
    """An iterative solver stopped before reaching its tolerance."""


class RankDeficientError(NumericError, ArithmeticError):
    """The pro-forma design ``(1, V)`` does not have full column rank."""


class InsufficientBatchesError(NumericError, ArithmeticError):
    """Too few batches to fit the pro-forma regression."""


class SingularJacobianError(NumericError, ArithmeticError):
    """The Jacobian of an estimating equation is singular at an iterate."""


class EmptyWindowError(NumericError, ArithmeticError):
    """No observation receives positive kernel weight."""
