"""Exception types shared across the toolkit."""


class GeometryError(Exception):
    """Base class for chart/metric level failures."""


class ChartDomainError(GeometryError):
    """A point lies outside the coordinate chart's valid domain."""


class DegenerateMetricError(GeometryError):
    """Metric is singular (or not positive definite) at the requested point."""


class ForbiddenRegionError(ChartDomainError):
    """E - U dropped below the turning-point margin; the Jacobi metric degenerates."""


class EnergyDriftError(GeometryError):
    """Integrator energy drift exceeded the configured bound."""


class ConfigError(Exception):
    """Malformed experiment configuration."""
