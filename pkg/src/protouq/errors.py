"""Exception types raised by protouq.

Every error the library raises deliberately is a subclass of ProtoUQError,
so callers can catch one type at the boundary (the CLI does exactly that).
"""


class ProtoUQError(Exception):
    """Base class for all protouq errors."""


# ---- embeddings and similarity ----

class ZeroVector(ProtoUQError):
    """A vector that must be normalizable has (near-)zero norm."""


class DimensionTooSmall(ProtoUQError):
    """Embedding dimension below the supported minimum."""


class DimensionMismatch(ProtoUQError):
    """Operands disagree on embedding dimension."""


class ModalityMismatch(ProtoUQError):
    """An operation received the wrong modality combination."""


class EmptyMatrix(ProtoUQError):
    """A similarity matrix with no rows or no columns."""


class LengthMismatch(ProtoUQError):
    """Paired vectors disagree on length."""


# ---- evidence ----

class NegativeEvidence(ProtoUQError):
    """Evidence entries must be finite and nonnegative."""


class EmptyVector(ProtoUQError):
    """An evidence or distribution vector with no entries."""


# ---- prototypes and training ----

class ZeroPrototype(ProtoUQError):
    """A prototype row collapsed to (near-)zero norm."""


class InvalidConfig(ProtoUQError):
    """A configuration value is out of range or unknown."""


class InsufficientPairs(ProtoUQError):
    """Not enough aligned pairs to form a training batch."""


# ---- re-ranking ----

class EmptyGrid(ProtoUQError):
    """The beta search grid is empty."""


# ---- metrics ----

class MissingPositive(ProtoUQError):
    """A retrieval query has no positive in the gallery."""


class ZeroVariance(ProtoUQError):
    """Correlation is undefined for a constant vector."""


class TooManyRemoved(ProtoUQError):
    """A removal count reaches or exceeds the number of pairs."""


class NotADistribution(ProtoUQError):
    """Entries are negative or do not sum to one."""


class InvalidCounts(ProtoUQError):
    """Caption/batch/group counts are inconsistent."""


# ---- file formats ----

class BadMagic(ProtoUQError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(ProtoUQError):
    """File version not understood by this reader."""


class TruncatedFile(ProtoUQError):
    """File ends before the declared payload."""


class ParseError(ProtoUQError):
    """A text input (CSV or pairs file) failed to parse."""


class DuplicatePair(ProtoUQError):
    """The same (vision, text) pair appears twice."""


class IndexOutOfRange(ProtoUQError):
    """A pair references an instance that does not exist."""


# ---- synthetic corpus ----

class InvalidSpec(ProtoUQError):
    """A synthetic corpus specification is inconsistent."""


# ---- catch-all contract violations ----

class InvariantViolation(ProtoUQError):
    """An internal invariant failed; indicates corrupt inputs or state."""
