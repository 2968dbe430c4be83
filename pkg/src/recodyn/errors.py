"""Exception hierarchy shared across the package."""


class RecodynError(Exception):
    """Base class for all package-specific errors."""


class InvalidType(RecodynError):
    """A type tuple has a letter outside its site alphabet."""


class InvalidDistribution(RecodynError):
    """Weights are too negative or do not sum to one within tolerance."""


class IncompatibleSupports(RecodynError):
    """Two distributions live on different site subsets."""


class InvalidPartitionFactors(RecodynError):
    """Product factors overlap or fail to cover the required site set."""


class InvalidPartition(RecodynError):
    """Blocks overlap, leave gaps, or the growth string is malformed."""


class InvalidArgument(RecodynError):
    """Generic precondition violation on an operation argument."""


class InvalidBlock(RecodynError):
    """A referenced block is not a block of the given partition."""


class NotIntervalPartition(RecodynError):
    """Site-labelling bijection applied to a non-interval partition."""


class NotMonotoneOrdering(RecodynError):
    """Explicit site ordering violates the outward-extension condition."""


class InvalidGrid(RecodynError):
    """Quadrature grid has an odd number of intervals or is too small."""


class QuadratureError(RecodynError):
    """Grid doubling failed to reach the requested tolerance."""


class StiffnessError(RecodynError):
    """ODE step underflow or loss of positivity beyond tolerance."""


class AssumptionViolation(RecodynError):
    """A solver route was invoked for a vector field or dual process
    outside its structural hypotheses (head locality / conditional
    linearity), without an explicit override."""


class Unsupported(RecodynError):
    """Configuration outside the supported regime (non-binary site,
    general rates where single-crossover is required, ...)."""


class SeriesOverflow(RecodynError):
    """t * ||A|| too large for a direct nonnegative series; split time."""


class LabelOverflow(RecodynError):
    """A branching label count exceeded its configured cap."""


class IncompleteLeaves(RecodynError):
    """Type propagation through an ancestry graph is missing leaf types."""


class ParseError(RecodynError):
    """Scenario file violates the schema; carries a JSON-pointer path."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")
