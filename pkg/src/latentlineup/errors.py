"""Exception hierarchy shared across the package."""


class LatentLineupError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(LatentLineupError):
    """A parameter object (resample spec, search config, ladder, ...) is invalid."""


class ShapeError(LatentLineupError):
    """Operands have incompatible dimensions."""


class CropError(LatentLineupError):
    """Requested crop does not fit inside the image."""


class UndefinedValueError(LatentLineupError):
    """The requested quantity is mathematically undefined for these inputs
    (zero-variance correlation, zero-sigma search update)."""


class CorpusError(LatentLineupError):
    """A corpus is empty, inconsistent, or too small for the operation."""


class DegenerateInputError(LatentLineupError):
    """Input admits no unique solution (e.g. all landmarks coincident)."""


class ProtocolError(LatentLineupError):
    """A session-level rule was violated: wrong round, duplicate participant,
    malformed ballot, stale trial."""


class SearchCompleteError(ProtocolError):
    """The search has already run its configured number of rounds."""


class AbortedSearchError(LatentLineupError):
    """The ballot source stopped mid-search; carries the partial state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
