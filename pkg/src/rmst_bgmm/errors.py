"""Exception and warning types raised across the package."""


class RmstError(Exception):
    """Base class for all errors raised by rmst_bgmm."""


class InputError(RmstError, ValueError):
    """Malformed or inconsistent input data."""


class EmptyDataset(InputError):
    pass


class InsufficientEvents(InputError):
    pass


class SingleArm(InputError):
    pass


class InvalidSpec(InputError):
    pass


class UnknownParameter(InputError, KeyError):
    pass


class DimensionMismatch(InputError):
    pass


class NumericalError(RmstError, ArithmeticError):
    """A computation could not be carried out to the required accuracy."""


class DomainError(NumericalError, ValueError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class NonFiniteTarget(NumericalError):
    pass


class TooFewDraws(NumericalError):
    pass


class Unachievable(NumericalError):
    pass


class ConvergenceError(RmstError):
    pass


class TooFewConverged(ConvergenceError):
    pass


class TauBeyondSupport(UserWarning):
    """Restriction time lies past the last observed time; the KM tail is carried flat."""


class DivergentChains(UserWarning):
    """At least one parameter has split R-hat above the convergence threshold."""
