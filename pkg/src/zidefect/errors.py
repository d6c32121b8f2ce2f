"""Exception hierarchy.

Two roots matter to callers: ``DataError`` (bad input, CLI exit code 2) and
``FitError`` (numerical or model failure, CLI exit code 3).
"""


class ZidefectError(Exception):
    """Base class for every error raised by the package."""


class DataError(ZidefectError):
    """Input or configuration problem detected before any fitting."""


class FitError(ZidefectError):
    """A computation could not produce a valid result."""


# -- input validation -------------------------------------------------------

class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonIntegerBugs(DataError):
    pass


class NonNumericCell(DataError):
    pass


class UnknownCovariate(DataError):
    pass


class ZeroCovariatesForNonZIFamily(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class ConfigError(DataError):
    pass


class DomainError(DataError, ValueError):
    """Argument outside the mathematical domain of a function."""


# -- numerical / fitting ----------------------------------------------------

class SingularMatrix(FitError):
    pass


class SingularDesign(FitError):
    """Covariates are collinear (including collinear with the intercept)."""


class NonFiniteObjective(FitError):
    pass


class NonFiniteLikelihood(FitError):
    pass


class DegenerateResponse(FitError):
    pass


class NoZerosForZIP(FitError):
    pass


class NotConverged(FitError):
    """Optimizer stopped early; ``best`` holds the best model found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ChainDiverged(FitError):
    pass


class InsufficientDraws(FitError):
    pass


class AllFitsFailed(FitError):
    pass
