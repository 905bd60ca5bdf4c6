"""Exception taxonomy shared across the package.

Configuration problems (bad hyperparameters, shape mismatches) raise
ConfigError; calling an API out of contract raises UsageError. Both are
distinct from genuine runtime failures such as training divergence.
"""


class ConfigError(ValueError):
    """A parameter or shape is outside its documented domain."""


class UsageError(RuntimeError):
    """An operation was invoked out of contract (wrong sequence or inputs)."""


class AnnotationError(ValueError):
    """A bounding-box annotation is malformed or out of image bounds."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss; carries the iteration index."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given labels (e.g. single-class AUC)."""


class UnsupportedDimensionError(ConfigError):
    """A closed form was requested outside the dimension it exists for."""


class CheckpointFormatError(ValueError):
    """A checkpoint file has the wrong magic, version, or structure."""
