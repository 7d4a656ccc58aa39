"""Exception hierarchy shared across the package."""


class ArithseqError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ArithseqError):
    """Invalid or inconsistent run configuration."""


class ParseError(ConfigError):
    """Malformed specification string (optimizer, stopping criterion, ...)."""


class MalformedSequence(ArithseqError):
    """Token sequence does not decode to a valid object."""


class OutOfRange(ArithseqError):
    """Value cannot be encoded under the given tokenizer spec."""


class UnknownToken(ArithseqError):
    """Token string absent from the vocabulary."""


class UnknownId(ArithseqError):
    """Token id outside the vocabulary."""


class DegenerateInput(ArithseqError):
    """Problem instance outside a solver's domain (e.g. gcd(0, 0))."""


class PositionOverflow(ArithseqError):
    """Sequence position beyond the model's maximum."""


class FileError(ArithseqError):
    """Data file missing or unreadable."""


class MalformedLine(ArithseqError):
    """Corpus line that cannot be split into input and output tokens."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class IoError(ArithseqError):
    """Checkpoint or export file could not be written or read."""


class VersionMismatch(IoError):
    """Checkpoint written by an incompatible format version."""


class IntegrityError(IoError):
    """Checkpoint failed its checksum or is truncated."""


class InsufficientData(ArithseqError):
    """Requested split sizes exceed the corpus size."""
