"""Exception types shared across the package."""


class RadiantError(Exception):
    """Base class for all package errors."""


class ConfigError(RadiantError, ValueError):
    """Malformed or incomplete run configuration."""


class GeometryError(RadiantError, ValueError):
    """Invalid atom geometry (coincident atoms, bad lattice spec, ...)."""


class NumericalError(RadiantError, RuntimeError):
    """A numerical procedure failed to converge or hit a singularity."""
