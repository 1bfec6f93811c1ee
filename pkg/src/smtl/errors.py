"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class ConfigError(ValueError):
    """Experiment or training configuration is invalid."""


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite during training."""
