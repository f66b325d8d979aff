"""Exception types shared across the package."""


class WavegateError(Exception):
    """Base class for all errors raised by wavegate."""


class ParameterError(WavegateError, ValueError):
    """A parameter lies outside its admissible domain."""


class CFLViolation(WavegateError):
    """The time step exceeds the stability limit of the scheme.

    Attributes
    ----------
    margin : float
        ``max sigma * dt**2 / 4`` over the sampled zone.
    lambda_max : float or None
        Largest admissible CFL ratio, when known.
    """

    def __init__(self, message, margin, lambda_max=None):
        super().__init__(message)
        self.margin = margin
        self.lambda_max = lambda_max


class TrackingError(WavegateError):
    """Eigen-branch continuation failed between two neighbouring grid points."""

    def __init__(self, message, xi):
        super().__init__(message)
        self.xi = xi


class NumericalFailure(WavegateError):
    """Non-finite values or a degenerate numerical quantity were produced."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UnobservableError(NumericalFailure):
    """Observed energy is degenerate (minimal Gramian eigenvalue <= 0)."""
