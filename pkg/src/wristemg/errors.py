"""Exception types raised across the package.

All of them derive from :class:`WristEMGError` so the CLI can turn any
failure into a machine-readable error record.
"""


class WristEMGError(Exception):
    """Base class for every error raised by this package."""


class LayoutError(WristEMGError, ValueError):
    pass


class DegenerateSubsetError(WristEMGError, ValueError):
    pass


class DegenerateGeometryError(WristEMGError, ValueError):
    pass


class DensityUndefinedError(WristEMGError, ValueError):
    pass


class SamplingError(WristEMGError, RuntimeError):
    pass


class FilterDesignError(WristEMGError, ValueError):
    pass


class SignalError(WristEMGError, ValueError):
    pass


class ProtocolError(WristEMGError, ValueError):
    pass


class ShapeError(WristEMGError, ValueError):
    pass


class NonFiniteError(WristEMGError, FloatingPointError):
    pass


class DivergenceError(WristEMGError, FloatingPointError):
    pass


class LeakageError(WristEMGError, RuntimeError):
    """A validation or test block reached normalization or training."""


class StatsError(WristEMGError, ValueError):
    pass


class ConfigError(WristEMGError, ValueError):
    pass
