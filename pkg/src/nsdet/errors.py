"""Exception hierarchy shared by all modules."""


class NsdetError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(NsdetError, ValueError):
    """Invalid geometry, configuration value or missing input."""


class NumericalError(NsdetError, RuntimeError):
    """A numerical procedure failed to deliver a trustworthy result."""


class SolverDivergenceError(NumericalError):
    """A linear solve missed its residual target within the iteration budget."""


class DegenerateSystemError(NumericalError):
    """A small dense system turned out singular."""


class InstabilityError(NumericalError):
    """The time stepper blew up."""


class NonConvergenceError(NumericalError):
    """Pseudo-time marching did not reach a steady state."""


class RankDeficiencyError(NumericalError):
    """Gram-Schmidt hit a near-zero pivot on every retry."""


class GridMismatchError(NsdetError, ValueError):
    """Two objects living on different grids were combined."""


class InsufficientSamplesError(NsdetError, ValueError):
    """Too few samples for a statistical estimate."""


class FormatError(NsdetError):
    """A DFLD1 stream is malformed."""
