"""Exception types shared across the package."""


class StargenError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(StargenError):
    """Element data does not match its declared shape, or two shapes disagree."""


class NotSelfAdjoint(StargenError):
    """Functional calculus needs a self-adjoint input."""


class SpectralGapError(StargenError):
    """A requested spectral cluster is not separated from the rest."""


class GridError(StargenError):
    """A point is off the sample grid, or grid construction is invalid."""


class DepthError(StargenError):
    """A stage index exceeds the truncation depth."""


class ZeroElementError(StargenError):
    """Operation undefined for the zero element."""


class SupplyError(StargenError):
    """A deterministic enumeration ran out before the requested count."""


class ResourceError(StargenError):
    """A configured resource cap (dimension, closure size) was exceeded."""


class InsufficientDepth(StargenError):
    """Stage selection or corner deepening ran out of stages.

    The message names the unmet condition.
    """


class IntervalSupplyError(StargenError):
    """The spectral interval registry cannot supply another disjoint interval."""


class LambdaCollision(StargenError):
    """A coefficient could not be nudged clear of the generator spectra."""


class MultiplicityError(StargenError):
    """Corner construction requires multiplicity n > 2m - 1."""


class HypothesisError(StargenError):
    """A structural hypothesis failed; the message names the violated item."""


class AssemblyError(StargenError):
    """Stage-term assembly is missing an ingredient."""
