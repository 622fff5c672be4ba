"""Exception hierarchy shared across the toolkit."""


class ProjTuneError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(ProjTuneError):
    """Non-finite values, bad labels, empty vectors, out-of-range args."""


class ShapeError(ProjTuneError):
    """Dimension mismatch between matrices/banks/heads."""


class DivergedError(ProjTuneError):
    """Training produced a non-finite loss.

    Carries the epoch index at which divergence was detected and the last
    finite weight matrix so callers can inspect or recover.
    """

    def __init__(self, epoch, last_w=None):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.last_w = last_w


class FormatError(ProjTuneError):
    """Base class for on-disk format problems."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class InvalidHeaderError(FormatError):
    pass


class GenerationError(ProjTuneError):
    """Synthetic scenario rejection budget exhausted."""


class UnsupportedInputError(ProjTuneError):
    """A required optional input (e.g. text pre-projection features) is missing."""
