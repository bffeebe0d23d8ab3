"""Exception types raised across the package."""


class WZWLabError(Exception):
    """Base class for all package errors."""


class CapacityError(WZWLabError):
    """Quadrature grid too coarse for the requested degree."""


class PreconditionError(WZWLabError):
    """Input violates a mathematical precondition (e.g. not Kähler)."""


class ConditioningError(WZWLabError):
    """Matrix too ill-conditioned to invert reliably."""


class DomainShrinkError(WZWLabError):
    """Stencil or kernel support leaves the grid."""


class ConfigError(WZWLabError):
    """Invalid experiment configuration."""


class NonConvergenceError(WZWLabError):
    """Iterative solver hit its iteration cap.

    Parameters
    ----------
    message : str
    history : list of float
        Residual (or decrement) per iteration.
    energy : list of float, optional
        Relaxation energy per iteration, when tracked.
    """

    def __init__(self, message, history=(), energy=()):
        super().__init__(message)
        self.history = list(history)
        self.energy = list(energy)

    @property
    def energy_monotone(self):
        e = self.energy
        return all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(e, e[1:]))
