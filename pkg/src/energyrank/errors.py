"""Exception types shared across the package."""


class EnergyRankError(Exception):
    """Base class for every error raised by energyrank."""


class ValidationError(EnergyRankError, ValueError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Tensor shapes do not line up for an operation."""


class ContractError(EnergyRankError, RuntimeError):
    """An API was called in a state it does not support."""


class GradientCheckError(EnergyRankError, RuntimeError):
    """The gradient-check harness could not run (e.g. non-deterministic closure)."""


class CompatibilityError(EnergyRankError):
    """A checkpoint does not match the featurizer configuration in use."""
