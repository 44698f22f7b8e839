"""Exception types shared across the package."""


class BittideError(Exception):
    """Base class for all package-specific errors."""


class TopologyError(BittideError):
    """The graph structure is invalid, or a node is unreachable."""


class ScheduleError(BittideError):
    """An edge schedule is inconsistent with its spanning tree."""


class ConfigError(BittideError):
    """A run configuration or input file is invalid."""


class SpectralError(BittideError):
    """A spectral computation failed; the graph is likely reducible."""


class NumericsError(BittideError):
    """A simulation produced a non-finite or unstable state."""


class InternalError(BittideError):
    """An internal consistency check failed."""
