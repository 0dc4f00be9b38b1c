"""Exception types shared across the package."""


class GanmpcError(Exception):
    """Base class for all package errors."""


class DimensionError(GanmpcError, ValueError):
    """A vector does not match the model's state/input dimensions."""


class ModelDomainError(GanmpcError, ValueError):
    """Dynamics evaluated outside their physical domain of validity."""


class GimbalLockError(ModelDomainError):
    """UAV pitch within the guard band of the T-matrix singularity."""


class LowSpeedError(ModelDomainError):
    """Vehicle longitudinal speed below the slip-angle validity floor."""


class DivergenceError(GanmpcError, RuntimeError):
    """Integration produced a non-finite or blown-up state."""


class SvrTrainingError(GanmpcError, RuntimeError):
    """SMO failed to reach the KKT tolerance within the iteration cap."""


class DatasetFormatError(GanmpcError, ValueError):
    """A dataset file is malformed."""


class ConfigError(GanmpcError, ValueError):
    """Invalid experiment or solver configuration."""


class IsolationError(GanmpcError, RuntimeError):
    """The controller touched the true plant state across the PIL boundary."""
