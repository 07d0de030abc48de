"""Exception types shared across the package."""


class GeometryError(Exception):
    """Base class for errors raised by geometric operations."""


class InvalidPointError(GeometryError):
    """A coordinate array does not represent a valid point of the manifold."""


class ManifoldMismatchError(GeometryError):
    """Operands live on different manifolds."""


class CutLocusError(GeometryError):
    """The logarithm is not defined: the target lies in the cut locus."""


class DegenerateGeodesicError(GeometryError):
    """No geodesic direction available (both endpoints coincide)."""


class ConjugatePointError(GeometryError):
    """Jacobi field inversion hit a conjugate point along the geodesic."""


class SingularLError(GeometryError):
    """The assembled mean-linearization operator is numerically singular."""


class NotDifferentiableError(GeometryError):
    """Requested gradient does not exist at this configuration."""


class NoConvergenceError(RuntimeError):
    """An iterative routine exhausted its iteration budget."""


class NumericalAbortError(RuntimeError):
    """A solver produced non-finite values and stopped."""


class ConfigError(ValueError):
    """A job configuration is missing keys or holds invalid values."""


class GridFormatError(ValueError):
    """A grid file could not be parsed."""
