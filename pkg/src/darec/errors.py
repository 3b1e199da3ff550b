"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: DataError -> 2,
ConfigError (and PhaseOrderError) -> 3, TrainingError -> 4.
"""


class DarecError(Exception):
    pass


class DimensionError(DarecError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainMathError(DarecError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class DataError(DarecError):
    """Malformed or out-of-contract input data."""


class ConfigError(DarecError):
    """Invalid configuration or incompatible option combination."""


class PhaseOrderError(ConfigError):
    """A pipeline phase was invoked before its prerequisite phase."""


class TrainingError(DarecError):
    """Training diverged or reached an unrecoverable state."""


class OptimizerStateError(DarecError, RuntimeError):
    """Optimizer stepped over parameters with missing gradients."""
