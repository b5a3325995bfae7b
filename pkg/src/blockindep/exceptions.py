"""Exception hierarchy shared by all modules."""


class BlockIndepError(Exception):
    """Base class for errors raised by this package."""


class PoleError(BlockIndepError, ValueError):
    """A transform was evaluated at (or numerically on top of) one of its poles."""


class BranchError(BlockIndepError, ValueError):
    """The analytic branch of a square root cannot be selected unambiguously."""


class ConvergenceError(BlockIndepError, RuntimeError):
    """An iterative solver failed to reach its tolerance.

    ``best`` carries the last iterate (may be None) and ``residual`` its residual.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class SingularJacobianError(ConvergenceError):
    pass


class EdgeProximityError(BlockIndepError, ValueError):
    """Evaluation point too close to a branch point of the subordination map."""


class RegimeError(BlockIndepError, ValueError):
    """Dimensions outside the regime where a statistic or formula is defined."""


class DimensionError(BlockIndepError, ValueError):
    pass


class SingularBlockError(BlockIndepError, ValueError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class QuadratureError(BlockIndepError, RuntimeError):
    pass


class ContourError(BlockIndepError, ValueError):
    pass


class DegenerateVarianceError(BlockIndepError, ValueError):
    pass


class ConfigError(BlockIndepError, ValueError):
    """Invalid simulation configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
