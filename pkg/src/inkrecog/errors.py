"""Exception hierarchy shared across the toolkit."""


class InkRecogError(Exception):
    """Base class for all toolkit errors."""


class ParseError(InkRecogError):
    """Input document is not well-formed."""


class InvariantError(InkRecogError):
    """A data-model invariant is violated; message names the location."""


class EmptyTraceError(InkRecogError):
    """Trace contains no drawable points."""


class BlankImageError(InkRecogError):
    """Image contains no ink pixels."""


class DegenerateTraceError(InkRecogError):
    """Trace too short for the requested operation."""


class DimensionMismatchError(InkRecogError):
    """Feature dimensions do not agree."""


class EmissionMismatchError(InkRecogError):
    """Observation type or symbol range does not match the emission model."""


class ZeroProbabilityError(InkRecogError):
    """All probability mass vanishes at some frame."""

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class NotGaussianError(InkRecogError):
    """Operation requires a Gaussian-mixture emission model."""


class NoDecodableSequencesError(InkRecogError):
    """Every training sequence failed to decode."""


class UnknownCharacterError(InkRecogError):
    """Character missing from the alphabet."""


class MissingFormError(InkRecogError):
    """Positional form missing from the model bank."""


class EmptyLexiconError(InkRecogError):
    """Recognition requires a non-empty lexicon."""


class DuplicateSystemError(InkRecogError):
    """System id already aligned into the word transition network."""


class IncompleteRankingError(InkRecogError):
    """Ranking does not cover every aligned system."""


class MismatchedSampleError(InkRecogError):
    """Hypotheses to combine refer to different samples."""


class TooFewSamplesError(InkRecogError):
    """Not enough samples to build the requested split."""
