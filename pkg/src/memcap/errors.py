"""Exception hierarchy shared across the engine."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatchError(EngineError):
    """Vector or matrix dimensions do not agree."""


class ZeroVectorError(EngineError):
    """A vector with (near-)zero norm cannot be normalized."""


class EmptyInputError(EngineError):
    """An operation received an empty sequence where at least one element is required."""


class EmptyCorpusError(EngineError):
    """A corpus-consuming operation received no entries."""


class EmptyMemoryError(EngineError):
    """The support memory holds no entries."""


class DegenerateCombinationError(EngineError):
    """A weighted combination collapsed to (near-)zero norm."""


class EncoderFailureError(EngineError):
    """The text encoder raised while embedding a sentence."""


class KOutOfRangeError(EngineError):
    """Requested k is outside [1, N]."""


class LengthMismatchError(EngineError):
    """Paired inputs have different lengths."""


class EmptyHypothesisError(EngineError):
    """BLEU requires a nonempty hypothesis."""


class SequenceTooLongError(EngineError):
    """Token sequence exceeds the decoder's maximum length."""


class UnknownTokenError(EngineError):
    """A word is not present in the closed vocabulary."""


class UnparseableCaptionError(EngineError):
    """Caption does not match the toy-world grammar."""


class FormatError(EngineError):
    """A persisted file does not follow the expected binary layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionUnsupportedError(FormatError):
    """File declares a format version this build cannot read."""


class TruncatedError(FormatError):
    """File ended before the declared payload was complete."""
