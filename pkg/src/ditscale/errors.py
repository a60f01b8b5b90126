"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, StoreError -> 2,
NumericalError -> 3.
"""


class DitscaleError(Exception):
    """Base class for all package errors."""


class ConfigError(DitscaleError):
    """Invalid configuration or usage (bad spec parameters, malformed config)."""


class StoreError(DitscaleError):
    """Missing or inconsistent run-store data."""


class NumericalError(DitscaleError):
    """Numerical failure: divergence, rejected fits, singular input."""


class SingularTimestepError(NumericalError):
    """Operation evaluated at a timestep where it is undefined (e.g. beta = 0)."""


class DivergedRunError(NumericalError):
    """Training or sampling produced non-finite values."""


class ConcaveFitError(NumericalError):
    """IsoFLOP parabola fit came out concave (a <= 0) or degenerate."""
