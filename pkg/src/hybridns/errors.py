"""Exception types shared across the package."""


class HybridNSError(Exception):
    """Base class for all solver errors."""


class InvalidArgumentError(HybridNSError, ValueError):
    """Bad user input: degenerate geometry, invalid counts, out-of-range values."""


class UnsupportedOrderError(HybridNSError, ValueError):
    """Polynomial order or quadrature degree outside the supported range."""


class SingularMatrixError(HybridNSError, RuntimeError):
    """Linear system is numerically singular."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class CondensationError(HybridNSError, RuntimeError):
    """Cell-local block could not be factorized during static condensation."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class PicardDivergenceError(HybridNSError, RuntimeError):
    """Fixed-point iteration failed to meet its stopping criterion."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConfigError(HybridNSError, ValueError):
    """Invalid scenario or CLI configuration."""
