"""Exception types shared across the engine."""


class FlabError(Exception):
    """Base class for all engine errors."""


class ConfigError(FlabError):
    """Invalid configuration: bad shapes, unknown keys, incompatible options."""


class NumericError(FlabError):
    """A forward/backward/update produced NaN or Inf."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class UsageError(FlabError):
    """API misuse, e.g. backward with a stale or mismatched cache."""


class DegenerateBatchError(FlabError):
    """A batch that cannot be trained on, e.g. all-zero loss weights."""


class DataFormatError(FlabError):
    """Malformed external file (IDX, dataset cache, checkpoint, CSV)."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
