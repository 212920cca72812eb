"""Exception types raised across the package."""


class IwcvError(Exception):
    """Base class for all package errors."""


class SingularCovarianceError(IwcvError, ValueError):
    """A fitted covariance matrix is not positive definite."""

    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConvergenceError(IwcvError, RuntimeError):
    """An iterative routine hit its iteration or refinement limit."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class DivergenceError(ConvergenceError):
    """An integral does not settle as its domain is widened."""


class DensityFloorError(IwcvError, ValueError):
    """A source density fell below the floor used to form a weight."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class DegenerateBetaError(IwcvError, ValueError):
    """The control-variate regression has a (near) zero denominator."""


class SweepError(IwcvError, RuntimeError):
    """Too many repetitions of a sweep failed."""
