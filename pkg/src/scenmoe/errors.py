"""Exception types shared across the package."""


class ScenMoeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ScenMoeError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ScenMoeError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(ScenMoeError):
    """An operation was invoked in a way its contract forbids."""


class IndexLookupError(ScenMoeError):
    """An embedding or table lookup index is out of range."""


class ValidationError(ScenMoeError):
    """A record, schema, or file failed validation."""


class ConfigError(ScenMoeError):
    """An experiment configuration is malformed."""


class GenerationError(ScenMoeError):
    """The synthetic data generator received an infeasible request."""


class SamplingError(ScenMoeError):
    """Negative sampling cannot proceed (e.g. single-item catalog)."""


class TrainingError(ScenMoeError):
    """The optimization loop hit a non-recoverable numeric condition."""


class CheckpointError(ScenMoeError):
    """A checkpoint file is malformed or inconsistent with the model."""
