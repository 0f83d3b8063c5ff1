"""Exception types shared across the package."""


class UniSRecError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(UniSRecError):
    """A hyperparameter or argument is outside its valid range."""


class InvalidInputError(UniSRecError):
    """Numeric input contains NaN or is otherwise unusable."""


class DegenerateVectorError(UniSRecError):
    """A vector with (near-)zero norm was passed where a direction is needed."""


class NumericFailureError(UniSRecError):
    """NaN encountered during the reverse sweep; carries the offending node name."""

    def __init__(self, node_name):
        self.node_name = node_name
        super().__init__(f"NaN gradient at node {node_name!r}")


class CorpusFormatError(UniSRecError):
    """Malformed corpus file (bad magic, size mismatch, parse error, ...)."""


class MissingEmbeddingError(UniSRecError):
    """An interaction references an item absent from the embedding table."""


class InvalidSpecError(UniSRecError):
    """Synthetic-corpus or config spec is invalid."""


class ConfigError(UniSRecError):
    """Bad key=value config file or incompatible checkpoint/config shapes."""


class CheckpointError(UniSRecError):
    """Corrupt or incompatible checkpoint file."""


class NotPretrainedError(UniSRecError):
    """Fine-tuning requested without a pre-trained checkpoint."""


class EmptyTestSetError(UniSRecError):
    """Evaluation requested on a split with no test users."""
