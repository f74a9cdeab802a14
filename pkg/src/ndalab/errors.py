"""Exception types shared across the package."""


class NdaError(Exception):
    """Base class for all errors raised by ndalab."""


class ContractError(NdaError, ValueError):
    """A precondition on an argument was violated."""


class ShapeError(ContractError):
    """Operands have incompatible shapes."""


class DomainError(NdaError, ValueError):
    """An operation was evaluated outside its mathematical domain."""


class NonFiniteError(NdaError, FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


class ConvergenceError(NdaError, RuntimeError):
    """An iterative solver ran out of iterations.

    The last residual is kept on ``residual`` so callers can decide whether
    it is close enough.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class TrainingError(NdaError, RuntimeError):
    """Training hit a non-finite loss; ``context`` holds where and what."""

    def __init__(self, message, context=None):
        super().__init__(message)
        self.context = context or {}


class ConfigError(ContractError):
    """A config file or override could not be parsed or validated."""


class ParseError(NdaError, ValueError):
    """A data file is malformed. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
