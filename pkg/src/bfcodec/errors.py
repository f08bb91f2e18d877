"""Exception hierarchy shared across the toolkit."""


class BfcodecError(Exception):
    """Base class for all toolkit errors."""


class InvalidKeypoint(BfcodecError):
    """Keypoint parameters are non-finite or out of domain."""


class FormatError(BfcodecError):
    """Malformed container/bitstream bytes.

    Carries the byte offset where the problem was detected.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IoError(BfcodecError):
    """File system failure while writing an artifact."""


class ConfigError(BfcodecError):
    """Invalid or inconsistent configuration values."""


class EmptyTrainingSet(BfcodecError):
    """Statistics requested over zero observations."""


class InvalidPair(BfcodecError):
    """A dexel pair query with identical indices."""


class SymbolError(BfcodecError):
    """A symbol outside the table alphabet was submitted for coding."""


class TruncatedBitstream(BfcodecError):
    """Decoder ran out of bits before completing the symbol count."""


class StreamError(BfcodecError):
    """Inconsistent stream state (length mismatch, missing reference, digest mismatch)."""


class DegenerateTrainingSet(BfcodecError):
    """Boosting input lacks one of the two pair labels."""


class DimensionError(BfcodecError):
    """Descriptor length does not match the dictionary."""


class EmptyGop(BfcodecError):
    """GOP aggregation over an empty descriptor list."""


class InsufficientCandidates(BfcodecError):
    """Matching needs at least two candidates for the ratio test."""


class InsufficientMatches(BfcodecError):
    """Too few correspondences for a homography model."""


class UndefinedAP(BfcodecError):
    """Average precision of a ranking with no relevant documents."""
