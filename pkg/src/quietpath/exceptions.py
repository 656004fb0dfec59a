"""Exception hierarchy shared by all modules."""


class QuietPathError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(QuietPathError, ValueError):
    """A precondition on a numeric argument was violated."""


class InvalidGeometryError(QuietPathError, ValueError):
    """A polygon is degenerate or not strictly convex."""


class MapValidationError(QuietPathError, ValueError):
    """Zones overlap, repeat an id, or fall outside the map bounds."""


class InvalidScenarioError(QuietPathError, ValueError):
    """Start/goal placement or charge targets are unusable."""


class NoFeasiblePlanError(QuietPathError):
    """The charge graph has no path from the start node to the super sink."""


class GraphFormatError(QuietPathError):
    """A graph cache file is malformed, truncated or has the wrong version."""


class InvariantViolationError(QuietPathError, AssertionError):
    """An internal guarantee failed (for example an upper bound below a lower bound)."""


class PlacementError(QuietPathError):
    """Random zone or endpoint placement gave up after its attempt budget."""


class SizeGuardError(QuietPathError, ValueError):
    """An exhaustive oracle was asked to run on an instance that is too large."""
