"""Exception hierarchy shared by every module."""


class GlpnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GlpnError, ValueError):
    """Operand shapes do not agree."""


class ContractError(GlpnError, ValueError):
    """An input violates a documented precondition (symmetry, range, ...)."""


class ConvergenceError(GlpnError, RuntimeError):
    """An iterative routine hit its iteration cap."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateNodeError(GlpnError, ValueError):
    def __init__(self, node, message=None):
        super().__init__(message or f"node {node} has no neighbours")
        self.node = node


class DataError(GlpnError, ValueError):
    """Malformed or inconsistent input data."""


class TrainingDivergence(GlpnError, RuntimeError):
    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
