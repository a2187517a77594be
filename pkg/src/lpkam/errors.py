"""Exception hierarchy shared by all modules."""


class LPKamError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(LPKamError):
    pass


class BasePointMismatch(LPKamError):
    pass


class TruncationExceeded(LPKamError):
    pass


class NotTangentToIdentity(LPKamError):
    pass


class EmptyRing(LPKamError):
    """No nonzero invariant exponent exists within the enumeration bound."""


class NoNonzeroWeights(LPKamError):
    pass


class OnCoordinateHyperplane(LPKamError):
    pass


class DegenerateUpToMuMax(LPKamError):
    pass


class UMaxTooSmall(LPKamError):
    pass


class ZeroSmallDivisor(LPKamError):
    """A small divisor fell below the floor at the base point.

    ``alpha`` carries the offending weight and ``value`` the divisor value.
    """

    def __init__(self, message, alpha=None, value=None, base=None):
        super().__init__(message)
        self.alpha = alpha
        self.value = value
        self.base = base


class NotGoodPerturbation(LPKamError):
    pass


class NotInSpan(NotGoodPerturbation):
    pass


class NotDiagonalLinear(NotGoodPerturbation):
    pass


class PreconditionViolated(LPKamError):
    pass


class ScheduleNotDiophantine(LPKamError):
    pass


class EpsilonTooLarge(LPKamError):
    pass


class NonPositiveDenominator(LPKamError):
    pass


class NotSymplecticPerturbation(LPKamError):
    pass


class NotVolumePreserving(LPKamError):
    pass


class StepUnderflow(LPKamError):
    pass


class FlowEscapedDomain(LPKamError):
    pass


class SchemaError(LPKamError):
    pass
