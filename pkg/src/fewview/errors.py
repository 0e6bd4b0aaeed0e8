"""Exception types shared across the library."""


class FewViewError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(FewViewError):
    """A point projects to camera-space depth <= 0 (behind or at the camera)."""


class TooFewGaussians(FewViewError):
    """Scene does not contain enough Gaussians for the requested operation."""


class StateMismatch(FewViewError):
    """Backward pass received state from a stale forward pass."""


class ParseError(FewViewError):
    """A file failed to parse."""


class UnknownViewIndex(FewViewError):
    """A match file references a view index outside the dataset."""


class EmptyAfterFiltering(FewViewError):
    """All matches were dropped by confidence / bounds filtering."""


class TooFewKeypoints(FewViewError):
    """Built-in matcher found fewer than the minimum number of matches."""


class NoSurvivingMatches(FewViewError):
    """Agreement masking removed every warped match for this iteration."""


class ShapeMismatch(FewViewError):
    """Two image-shaped arrays disagree in shape."""


class EmptyScene(FewViewError):
    """Operation requires a nonempty Gaussian scene."""


class StaleNeighbors(FewViewError):
    """KNN neighbor lists no longer match the scene size."""


class DimensionMismatch(FewViewError):
    """Ingested data dimensions do not match the target image."""


class MissingImage(FewViewError):
    """Dataset references an image file that does not exist."""


class DegenerateIntrinsics(FewViewError):
    """Camera intrinsics violate their invariants."""


class NonFiniteGradient(FewViewError):
    """Gradients contain NaN or infinity; the optimizer step is skipped."""
