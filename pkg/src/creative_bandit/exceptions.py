"""Error taxonomy shared across the package."""


class CreativeBanditError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(CreativeBanditError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class InvalidHyperparameter(CreativeBanditError, ValueError):
    """A distribution or policy hyperparameter is outside its domain."""


class ZeroImpressions(CreativeBanditError, ValueError):
    """An empirical rate was requested for a creative with no impressions."""


class NonFiniteLoss(CreativeBanditError, ArithmeticError):
    """Training loss became NaN or infinite (learning rate too high)."""


class EmptyCandidateSet(CreativeBanditError, ValueError):
    """A policy was asked to choose among zero candidates."""


class UnknownArm(CreativeBanditError, LookupError):
    """An observation names a creative that was never offered for the product."""


class UnknownPolicyKind(CreativeBanditError, ValueError):
    """Requested policy kind is not in the catalog."""


class MissingFeature(CreativeBanditError, LookupError):
    """A creative referenced by the impression log has no feature vector."""


class EmptyDataset(CreativeBanditError, ValueError):
    """An operation that needs at least one impression got none."""


class ParseError(CreativeBanditError, ValueError):
    """A data file failed to parse.

    Carries the offending path and 1-based line number for diagnostics.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{where}{message}")


class InvalidClick(ParseError):
    """A click label was not 0 or 1."""


class WrongColumnCount(ParseError):
    """A record had an unexpected number of columns."""


class DegenerateDataWarning(UserWarning):
    """Input data was degenerate and a documented fallback was used."""
