"""Exception hierarchy shared across the package."""


class NavfuseError(Exception):
    """Base class for all package errors."""


class MapError(NavfuseError):
    """Grid map construction, query or serialization failure."""


class LocalizationError(NavfuseError):
    """LiDAR matching cannot produce a usable fix (e.g. insufficient overlap)."""


class GeometryError(NavfuseError):
    """GNSS solution is rank deficient or otherwise unsolvable."""


class AmbiguityError(NavfuseError):
    """Integer ambiguity search exceeded its candidate budget."""


class FilterError(NavfuseError):
    """Kalman filter numerical failure or divergence signal."""


class ScenarioError(NavfuseError):
    """Simulation scenario is invalid or kinematically infeasible."""
