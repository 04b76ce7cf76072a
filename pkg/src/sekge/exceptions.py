"""Exception types raised across the toolkit."""


class KGDataError(ValueError):
    """Malformed, missing or inconsistent knowledge-graph input."""


class ShapeError(ValueError):
    """Operands of a tensor primitive have incompatible shapes."""


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration key."""


class TrainingError(RuntimeError):
    """Numerical failure during training (NaN loss or gradient)."""
