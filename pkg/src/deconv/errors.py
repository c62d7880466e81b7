"""Exception hierarchy shared by every module.

Each class name is also the ``"error"`` token the CLI prints on stderr, so
renaming one is a breaking change for scripts.
"""


class DeconvError(Exception):
    """Base class for model and estimation failures."""


class ZeroDensityAtObservation(DeconvError):
    pass


class NotConverged(DeconvError):
    pass


class InstanceTooLarge(DeconvError):
    pass


class DomainExceeded(DeconvError):
    pass


class NotDifferentiable(DeconvError):
    pass


class InsufficientData(DeconvError):
    pass


class DegenerateDerivative(DeconvError):
    pass


class NonpositiveVariance(DeconvError):
    pass


class ZeroMixtureDensity(DeconvError):
    pass


class WindowTooNarrow(DeconvError):
    pass


class IllConditioned(DeconvError):
    pass


class NotAbsolutelyContinuous(DeconvError):
    pass


class NotACdf(DeconvError):
    pass


class InsufficientPoints(DeconvError):
    pass


class StudyAborted(DeconvError):
    """Raised when more than 5% of replicates fail inside one study cell."""
