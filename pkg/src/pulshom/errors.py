"""Exception types raised across the package."""


class PulshomError(Exception):
    """Base class for all package errors."""


class ClearanceViolation(PulshomError):
    """Obstacle comes closer to the cell boundary than the allowed clearance."""


class InvalidSlice(PulshomError):
    """Slice parameter outside [0, 1] or otherwise malformed."""


class PointNotOnInterface(PulshomError):
    """Velocity requested at a point that is not on the obstacle boundary."""


class DegenerateMap(PulshomError):
    """Reference map has a Jacobian that is too small or cannot be built."""


class MeshFailure(PulshomError):
    """Mesh generation produced invalid or low-quality elements."""


class NonFiniteCoefficient(PulshomError):
    """A coefficient evaluated to NaN or infinity."""


class IncompatibleData(PulshomError):
    """Right-hand side of a pure Neumann problem does not integrate to zero."""


class InsufficientSlices(PulshomError):
    """Too few slices to integrate over the period reliably."""


class SolverDivergence(PulshomError):
    """Time stepper produced non-finite values."""


class GridMismatch(PulshomError):
    """Two fields cannot be compared on a common grid."""


class ConfigError(PulshomError):
    """Invalid configuration file."""

    def __init__(self, message, line=None, column=None, source=None):
        self.message = message
        self.source = source
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc += ": "
        if source:
            loc = f"{source}: " + loc
        super().__init__(loc + message)
