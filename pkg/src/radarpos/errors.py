"""Exception taxonomy shared across the package."""


class RadarPosError(Exception):
    """Base class for all package errors."""


class DimensionError(RadarPosError):
    """Operand shapes violate an operation's contract."""


class DomainError(RadarPosError):
    """Input values lie outside an operation's mathematical domain."""


class GradientContractError(RadarPosError):
    """Autodiff contract violation, e.g. backward on a non-scalar."""


class ConfigError(RadarPosError):
    """Invalid or inconsistent configuration."""


class FormatError(RadarPosError):
    """Malformed dataset or checkpoint file."""


class InsufficientDataError(RadarPosError):
    """Not enough pulses to build a sample."""


class DegenerateInputError(RadarPosError):
    """Numerically degenerate input, e.g. a zero-norm vector in a cosine."""


class NumericAbort(RadarPosError):
    """Training reached a non-finite loss and was aborted."""

    def __init__(self, message, batch_index=None, loss_history=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.loss_history = list(loss_history) if loss_history is not None else []
