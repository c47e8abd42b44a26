"""Exception hierarchy shared by all ctxpose modules."""


class CtxposeError(Exception):
    """Base class for all errors raised by this package."""


# skeleton
class InvalidEdge(CtxposeError):
    """Edge endpoint out of range, or a self-loop."""


class CyclicGraph(CtxposeError):
    """Operation requires an acyclic graph."""


class DisconnectedGraph(CtxposeError):
    """Operation requires a connected graph."""


class EmptyDataset(CtxposeError):
    """A nonempty pose collection is required."""


# grid
class IndexOutOfRange(CtxposeError):
    """Flat voxel index outside the grid."""


class NonPositiveSigma(CtxposeError):
    """Gaussian width must be strictly positive."""


class UnnormalizedHeatmap(CtxposeError):
    """Per-joint heatmap mass deviates from 1 beyond tolerance."""


# psm
class SearchSpaceTooLarge(CtxposeError):
    """Exhaustive search would exceed the configured assignment cap."""


# gnn / contextpose / model
class ShapeMismatch(CtxposeError):
    """Array shapes are inconsistent with each other or the grid."""


class UnknownUpdateFunction(CtxposeError):
    """Update function id is not registered."""


class DegenerateNormalizer(CtxposeError):
    """Pairwise-attention normalizer underflowed to zero."""


class TapeConsumed(CtxposeError):
    """A gradient tape can back-propagate only once."""


# losses
class GtOutsideGrid(CtxposeError):
    """Ground-truth joint lies outside the voxel grid box."""


# metrics
class DegenerateConfiguration(CtxposeError):
    """Point set too degenerate for rigid alignment (collinear or too few)."""


class ZeroLengthLimb(CtxposeError):
    """Limb directions are undefined for zero-length limbs."""


# synthgen
class BoxTooSmall(CtxposeError):
    """Could not fit a sampled pose inside the grid box."""


# cli
class ConfigError(CtxposeError):
    """Invalid experiment configuration (CLI exit code 2)."""


class DataMismatch(CtxposeError):
    """Sample sets of two runs do not line up (CLI exit code 4)."""
