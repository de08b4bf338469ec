"""Exception types raised by the library."""


class DualDecompError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(DualDecompError):
    pass


class BlockOutsideIncidence(DualDecompError):
    """A coupling block was supplied for an edge absent from the incidence."""


class NonPositiveStrongConvexity(DualDecompError):
    pass


class DecoupledAgent(DualDecompError):
    """An agent participates in no coupling block."""


class EmptyBlockNeighborhood(DualDecompError):
    """A constraint block has no neighboring agents."""


class NoRootInDomain(DualDecompError):
    """The scalar optimality equation has no root in the log domain."""


class NonConvergence(DualDecompError):
    """A scalar inner solver exceeded its iteration cap."""


class PowerIterationStall(DualDecompError):
    pass


class MissingReference(DualDecompError):
    """An operation needing a reference optimum was called without one."""


class DegenerateDenominator(DualDecompError):
    pass


class InsufficientData(DualDecompError):
    pass


class MalformedMatrix(DualDecompError):
    """A bracketed matrix in a case file could not be parsed."""


class UnknownBusReference(DualDecompError):
    pass


class NonPositiveReactance(DualDecompError):
    pass


class EmptyRoute(DualDecompError):
    """A source uses no link, or a link is used by no source."""


class MissingMessage(DualDecompError):
    """A node did not receive a message it expected on one of its edges."""


class ForeignEdge(DualDecompError):
    """A message was injected on an edge absent from the incidence."""
