"""Exception types raised across the package."""


class DerivlearnError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(DerivlearnError, ValueError):
    """Invalid static configuration (layer sizes, weights, config files)."""


class ShapeError(DerivlearnError, ValueError):
    """Array arguments with incompatible shapes."""


class AxisError(DerivlearnError, IndexError):
    """Axis index outside the valid coordinate range."""


class EmptyBatchError(DerivlearnError, ValueError):
    """An operation that needs at least one sample received none."""


class SpecificationError(DerivlearnError, ValueError):
    """A loss or pipeline was asked to run without the target arrays it needs."""


class CapabilityError(DerivlearnError, RuntimeError):
    """A derivative order or problem feature that the callee cannot supply."""


class NumericalError(DerivlearnError, ArithmeticError):
    """Non-finite values encountered during evaluation or optimization."""


class StabilityError(DerivlearnError, RuntimeError):
    """A solver run violated its stability constraint (CFL, blow-up)."""


class BoundaryError(DerivlearnError, ValueError):
    """A finite-difference stencil or query point left the sampled region."""


class DomainError(DerivlearnError, ValueError):
    """A query point outside the hull of a grid field."""


class DivergenceError(DerivlearnError, RuntimeError):
    """Time integration produced non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
