"""Exception types shared across the package."""


class TracoError(Exception):
    """Base class for all library errors."""


class ShapeError(TracoError, ValueError):
    pass


class InvalidArgumentError(TracoError, ValueError):
    pass


class NumericError(TracoError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ConfigError(TracoError, ValueError):
    pass


class CheckpointIOError(TracoError, OSError):
    """Checkpoint file is missing, unreadable, or truncated."""


class CheckpointSchemaError(TracoError, ValueError):
    """Checkpoint file is readable but has the wrong format or version."""


class EmptyVocabularyError(ConfigError):
    """Filtering left no words (or no documents) to model."""


class VocabularyMismatchError(TracoError, ValueError):
    """A checkpoint and a corpus were built on different vocabularies."""
