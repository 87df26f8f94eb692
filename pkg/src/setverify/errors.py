"""Exception hierarchy shared by all setverify modules."""


class SetVerifyError(Exception):
    """Base class for every error raised by this package."""


# -- imaging -----------------------------------------------------------------

class UnreadableImageError(SetVerifyError):
    """File is missing, truncated, or not a supported raster format."""


class EmptyImageError(SetVerifyError):
    """Decoded image has zero area."""


class EmptyInkError(SetVerifyError):
    """Binarization produced no ink pixels."""


# -- features ----------------------------------------------------------------

class TooFewEdgePointsError(SetVerifyError):
    """Shape context needs at least 6 edge pixels."""


# -- distances ---------------------------------------------------------------

class EmptyVectorError(SetVerifyError):
    """Distance measure received an empty vector."""


class LengthMismatchError(SetVerifyError):
    """Histogram distance requires equal-length vectors."""


# -- classifier --------------------------------------------------------------

class DimMismatchError(SetVerifyError):
    """Vector dimension does not match the model / kernel operand."""


class SingularSystemError(SetVerifyError):
    """The training linear system could not be solved to tolerance."""


class InsufficientDataError(SetVerifyError):
    """Not enough samples (or classes) for the requested training/CV."""


# -- complexity --------------------------------------------------------------

class DegenerateDataError(SetVerifyError):
    """Fewer distinct points than clusters requested."""


# -- datasets ----------------------------------------------------------------

class BadLayoutError(SetVerifyError):
    """Corpus directory does not follow <writer>/{genuine,forgery}/*.png."""


class EmptyWriterError(SetVerifyError):
    """A writer directory contains no genuine signatures."""


class InsufficientCorpusError(SetVerifyError):
    """Corpus too small to build the requested dataset of sets."""


# -- evaluation --------------------------------------------------------------

class OneClassOnlyError(SetVerifyError):
    """FAR/FRR/EER/AUC need scores from both truth classes."""


class MalformedRowError(SetVerifyError):
    """A Likert response row could not be parsed."""


# -- methods -----------------------------------------------------------------

class MissingModelError(SetVerifyError):
    """The method bundle lacks a model required for this verification."""
