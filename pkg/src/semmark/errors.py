"""Exception and warning types shared across the package."""


class SemmarkError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SemmarkError):
    pass


class ZeroVector(SemmarkError):
    pass


class NonFinite(SemmarkError):
    pass


class InsufficientSamples(SemmarkError):
    pass


class TooFewPoints(SemmarkError):
    pass


class TooFewSamples(SemmarkError):
    pass


class EmptyText(SemmarkError):
    pass


class BadAlpha(SemmarkError):
    pass


class BadDim(SemmarkError):
    pass


class BatchTooSmall(SemmarkError):
    pass


class CorpusTooSmall(SemmarkError):
    pass


class DivergedLoss(SemmarkError):
    pass


class PoolExhausted(SemmarkError):
    def __init__(self, message, n_watermark=0, n_plain=0):
        super().__init__(message)
        self.n_watermark = n_watermark
        self.n_plain = n_plain


class DegenerateLabels(SemmarkError):
    pass


class ParseError(SemmarkError):
    pass


class DimMismatch(ParseError):
    pass


class BadMagic(SemmarkError):
    pass


class TruncatedFile(SemmarkError):
    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class NetworkError(SemmarkError):
    pass


class AuthFailed(NetworkError):
    pass


class MalformedResponse(NetworkError):
    pass


class RankDeficientWarning(UserWarning):
    """Least-squares system is rank deficient; pseudoinverse solution still returned."""
