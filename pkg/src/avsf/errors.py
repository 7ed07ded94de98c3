"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input tensor has the wrong spatial or temporal shape."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or out of range."""


class StateError(RuntimeError):
    """Operation requires model state that is not present (e.g. no classifier head)."""


class StageError(RuntimeError):
    """Checkpoint stage tag does not match what the operation expects."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""
