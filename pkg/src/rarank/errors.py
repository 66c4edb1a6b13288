"""Exception types shared across the package."""


class RarankError(Exception):
    """Base class for every error raised by this package."""


class ZeroVector(RarankError):
    """A vector with (near-)zero norm cannot be normalized."""


class DimensionMismatch(RarankError):
    """Query or record dimension does not match the store dimension."""


class InvariantViolation(RarankError):
    """A domain object violates one of its declared invariants."""


class EmptyStore(RarankError):
    """Operation requires at least one record."""


class EmptyBank(RarankError):
    """Operation requires a non-empty text bank."""


class BadMagic(RarankError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(RarankError):
    """File version is newer than this reader understands."""


class Truncated(RarankError):
    """File ended before the declared payload was complete."""


class BadDim(RarankError):
    """Requested projection dimension is out of range."""


class TooManyCandidates(RarankError):
    """Ranking prompts support at most 32 candidates."""


class BackendUnreachable(RarankError):
    """Remote ranker did not produce a usable response after retries."""


class CatalogMismatch(RarankError):
    """Two stores that must share a label catalog do not."""


class PoolTooSmall(RarankError):
    """Neighbor pool is larger than the store it is drawn from."""


class EmptySet(RarankError):
    """Metric computed over an empty prediction set."""


class MissingBucket(RarankError):
    """An evaluated category has no frequency-bucket assignment."""


class DegenerateBox(RarankError):
    """Bounding box has no area after construction or clamping."""
