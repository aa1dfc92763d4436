"""Exception hierarchy shared by all solvers and tools."""


class StratflowError(Exception):
    """Base class for all errors raised by this package."""


class EosDomainError(StratflowError, ValueError):
    """State outside the validity domain of an equation of state."""


class ClosureError(StratflowError):
    """Pressure-equilibrium closure failed.

    Carries ``best_alpha`` and ``residual`` (best iterate and its pressure
    mismatch) when the root solve made progress before failing.
    """

    def __init__(self, message, best_alpha=None, residual=None):
        super().__init__(message)
        self.best_alpha = best_alpha
        self.residual = residual


class CflViolation(StratflowError):
    """Requested time step exceeds the stability bound.

    ``admissible_dt`` is the largest step the current state allows.
    """

    def __init__(self, message, admissible_dt):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class PositivityError(StratflowError):
    """Partial mass or density fell below the positivity floor."""

    def __init__(self, message, cell=None, phase=None):
        super().__init__(message)
        self.cell = cell
        self.phase = phase


class GeometryError(StratflowError):
    """Layer thickness degenerated below the admissible band."""


class RegimeExitError(StratflowError):
    """Solution left the stratified regime the model assumes."""


class SpectrumError(StratflowError):
    """Eigenvalue residual check failed.

    ``best_residual`` is the largest relative eigenpair residual reached.
    """

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class ConfigError(StratflowError):
    """Invalid experiment configuration; message names the violated key."""
