"""Exception hierarchy shared by the numerical modules and the CLI."""


class XetdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(XetdError, ValueError):
    """Array shapes of an MDP, policy or feature map do not agree."""


class ConfigError(XetdError, ValueError):
    """An experiment or MDP configuration is invalid."""


class ErgodicityError(XetdError, ArithmeticError):
    """Power iteration did not settle on a unique stationary distribution."""


class SingularSystemError(XetdError, ArithmeticError):
    """A dense linear solve hit a (numerically) singular matrix.

    Attributes
    ----------
    condition_number : float or None
        2-norm condition number of the offending matrix when it was computed.
    """

    def __init__(self, message, condition_number=None):
        if condition_number is not None:
            message = f"{message} (condition number {condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class NonEvaluableError(SingularSystemError):
    """The Bellman system for the true values has no unique bounded solution."""


class EmphasisDivergenceError(SingularSystemError):
    """The limiting expected followon trace is not a finite vector."""


class NotPositiveDefiniteError(XetdError, ArithmeticError):
    """A matrix that must be positive definite for a bound to exist is not."""


class EmptyBufferError(XetdError, LookupError):
    """Sampling was requested from a replay buffer with no segments."""


class OutputError(XetdError, OSError):
    """Reading or writing a result file failed."""
