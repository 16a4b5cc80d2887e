"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class TrainingError(RuntimeError):
    """Training diverged or produced a non-finite value."""


class StateError(RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class DegenerateThresholdError(ValueError):
    """A layer threshold collapsed to (near) zero, so the layer is dead."""


class SimulationError(RuntimeError):
    """The spiking simulation produced a non-finite membrane potential."""


class ConversionError(ValueError):
    """An ANN could not be converted to a spiking network."""


class FormatError(ValueError):
    """A file on disk does not match its expected format."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""
