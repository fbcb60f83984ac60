"""Exception hierarchy shared by every module in the package."""


class PerfzoError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PerfzoError, ValueError):
    pass


class InvalidParameterError(PerfzoError, ValueError):
    pass


class InfeasibleModelError(PerfzoError, ValueError):
    """A model parameter was outside the model space beyond tolerance."""


class LossBoundError(PerfzoError, ValueError):
    """A normalized loss fell outside [0, F]."""


class OracleFailureError(PerfzoError, RuntimeError):
    pass


class OracleUnsupportedError(PerfzoError, ValueError):
    pass


class UnsupportedError(PerfzoError, ValueError):
    pass


class InsufficientSamplesError(PerfzoError, ValueError):
    pass


class InsufficientDataError(PerfzoError, ValueError):
    pass


class CalibrationMissingError(PerfzoError, LookupError):
    pass


class CalibrationFailureError(PerfzoError, RuntimeError):
    pass


class ConfigError(PerfzoError, ValueError):
    """Invalid optimizer or experiment configuration."""
