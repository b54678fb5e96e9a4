"""Exception types raised across the package."""


class LatentBaseError(Exception):
    """Base class for every error raised by latent_base."""


class DimensionMismatch(LatentBaseError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(LatentBaseError, ValueError):
    """A matrix that must be SPD failed factorization (degenerate covariance,
    rank-deficient WᵀW, ...)."""


class NonFiniteLoss(LatentBaseError, FloatingPointError):
    """Training produced a NaN/inf loss. ``history`` holds the losses recorded
    before divergence."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NonFiniteObjective(NonFiniteLoss):
    pass


class ExactVolumeUnavailable(LatentBaseError, TypeError):
    """The mapping has no tractable Jacobian term."""


class TooShort(LatentBaseError, ValueError):
    pass


class UnsupportedFormat(LatentBaseError, ValueError):
    pass


class SampleRateMismatch(UnsupportedFormat):
    pass


class BadMagic(LatentBaseError, ValueError):
    pass


class TruncatedFile(LatentBaseError, ValueError):
    pass


class CountMismatch(LatentBaseError, ValueError):
    pass


class NoLabels(LatentBaseError, ValueError):
    pass


class BundleError(LatentBaseError):
    """A model bundle is missing, malformed, or incomplete."""
