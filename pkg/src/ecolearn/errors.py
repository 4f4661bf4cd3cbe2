"""Exception types shared across the package."""


class EcoLearnError(Exception):
    """Base class for all package errors."""


class DimensionError(EcoLearnError, ValueError):
    """State, field or operator shapes do not agree."""


class ConfigError(EcoLearnError, ValueError):
    """Invalid configuration value (proportion, layer layout, iterations...)."""


class GridError(EcoLearnError, ValueError):
    """Spatial grid too small or otherwise malformed."""


class DataError(EcoLearnError, ValueError):
    """Not enough data points for the requested operation."""


class SolveError(EcoLearnError, ArithmeticError):
    """Least-squares system could not be solved."""


class MetricError(EcoLearnError, ArithmeticError):
    """Relative error undefined (zero reference norm)."""


class NumericalBlowup(EcoLearnError, FloatingPointError):
    """A non-finite value appeared during time stepping or differentiation.

    ``step`` and ``stage`` locate the failure when known.
    """

    def __init__(self, message, step=None, stage=None):
        super().__init__(message)
        self.step = step
        self.stage = stage
