"""Exception types shared across the package.

Every error raised deliberately by this package derives from :class:`MvfhError`,
so callers (notably the CLI) can map failures to stable categories.
"""


class MvfhError(Exception):
    """Base class for all package errors."""


class InvalidInput(MvfhError):
    """An argument is outside its documented domain (non-finite, bad range, ...)."""


class NotPositiveDefinite(MvfhError):
    """A matrix required to be symmetric positive definite failed factorization."""


class NotPSD(MvfhError):
    """A matrix required to be positive semi-definite has a negative eigenvalue."""


class DimensionMismatch(MvfhError):
    """Array shapes or global dimensions (k, s, m) are inconsistent."""


class RankDeficientDesign(MvfhError):
    """The stacked covariate matrix does not have full column rank."""


class NonPDSamplingCovariance(MvfhError):
    """A sampling covariance matrix D_i is not positive definite."""


class ParseError(MvfhError):
    """A dataset file could not be parsed; message carries record context."""


class IndexOutOfRange(MvfhError):
    """An area index is outside 0..m-1."""


class SameArea(MvfhError):
    """A two-area operation was given the same area twice."""


class DegenerateCorrection(MvfhError):
    """The Bartlett factor 1 + h* is non-positive; the asymptotic correction is invalid."""


class UnsupportedK(MvfhError):
    """The built-in simulation design only covers k in {2, 3}."""


class InvalidGroupSize(MvfhError):
    """The number of areas is not divisible into the five sampling-variance groups."""
