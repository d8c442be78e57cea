"""Exception types shared across the simulator."""


class SimulatorError(Exception):
    """Base class for all feddropsim errors."""


class DimensionError(SimulatorError):
    """Tensor or layer shapes do not line up."""


class NumericError(SimulatorError):
    """A computation produced non-finite values."""


class InputError(SimulatorError):
    """Invalid argument values (empty batches, bad labels, malformed files)."""


class MaskError(SimulatorError):
    """A neuron mask is inconsistent with the model shape."""


class RateError(SimulatorError):
    """A dropout rate is outside the quantized grid or would empty a layer."""


class AggregationError(SimulatorError):
    """Client updates cannot be combined into the global model."""


class ConfigError(SimulatorError):
    """An experiment configuration failed validation."""


class AnalysisError(SimulatorError):
    """A variance-analysis quantity is undefined for the given inputs."""
