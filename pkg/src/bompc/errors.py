"""Exception types shared across the package."""


class BompcError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(BompcError, ValueError):
    pass


class NotPositiveDefinite(BompcError, ArithmeticError):
    """A Cholesky pivot was not strictly positive."""


class NoConvergence(BompcError, RuntimeError):
    pass


class NonFiniteState(BompcError, FloatingPointError):
    """Plant integration produced NaN or Inf."""


class MaxIterations(BompcError, RuntimeError):
    """The QP solver hit its iteration limit."""


class ConfigError(BompcError, ValueError):
    pass
