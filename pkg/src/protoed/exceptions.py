"""Exception types shared across the package."""


class ProtoedError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(ProtoedError, ValueError):
    """Raised when input data violates a documented invariant."""


class CorpusParseError(ProtoedError, ValueError):
    """Raised when a corpus file cannot be parsed. Message carries the line number."""


class InfeasibleSampleError(ProtoedError, ValueError):
    """Raised when a few-shot sample cannot be drawn. Message names the offending type."""


class ConfigError(ProtoedError, ValueError):
    """Raised for invalid method or optimizer configurations."""


class TrainingDivergedError(ProtoedError, RuntimeError):
    """Raised when the training loss becomes non-finite."""
