"""Exception types raised by the tracking pipeline."""


class AdpTrackError(Exception):
    """Base class for all package errors."""


class DimensionError(AdpTrackError, ValueError):
    """Array shapes do not agree with the declared basis or state size."""


class RankDeficiencyError(AdpTrackError, ValueError):
    """The weighted least-squares reference fit has a singular normal matrix."""


class AmplitudeError(AdpTrackError, ValueError):
    """A generated reference leaves the plate."""


class NonConvexInControl(AdpTrackError, ArithmeticError):
    """The Q-function is not strictly convex in the control (h_uu too small)."""

    def __init__(self, h_uu, iteration=None):
        self.h_uu = h_uu
        self.iteration = iteration
        where = "" if iteration is None else f" at iteration {iteration}"
        super().__init__(f"h_uu = {h_uu:.6g} is not positive{where}")


class SingularEvaluation(AdpTrackError, ArithmeticError):
    """The LSTDQ fixed-point system could not be solved."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class NumericalFailure(AdpTrackError, ArithmeticError):
    """Non-finite values appeared during accumulation or simulation."""


class NotConverged(AdpTrackError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The partial result, when there is one, is kept in ``result``.
    """

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class InvalidCost(AdpTrackError, ValueError):
    """A cost matrix is not positive semi-definite."""


class PlateEdgeContact(AdpTrackError, RuntimeError):
    """The simulated ball left the plate.

    ``partial`` holds whatever trajectory was produced before contact.
    """

    def __init__(self, message, step=None, partial=None):
        self.step = step
        self.partial = partial
        super().__init__(message)


class ConfigError(AdpTrackError, ValueError):
    """Malformed or unknown experiment configuration entries."""
