"""Exception types shared across the pipeline."""


class CorefDstError(Exception):
    """Base class for all package-specific errors."""


class LoadError(CorefDstError):
    """Raised when raw corpus files are missing or unreadable."""


class SpanError(CorefDstError):
    """Raised when a character span cannot be mapped onto the tokenization."""


class EncodingError(CorefDstError):
    """Raised when an encoder input sequence cannot be built."""


class DecodeError(CorefDstError):
    """Raised when a predicted token span cannot be decoded back to text."""


class TrainingError(CorefDstError):
    """Raised when training aborts (e.g. non-finite loss)."""


class MergeError(CorefDstError):
    """Raised when base and coreference states cannot be merged."""


class EvaluationError(CorefDstError):
    """Raised when prediction and gold inputs are misaligned."""
