"""Exception types raised across the package."""


class ParameterDomainError(ValueError):
    """A distribution or model parameter lies outside its valid domain."""


class FitDegenerateError(ValueError):
    """Samples cannot identify a distribution (e.g. zero variance)."""


class StabilityError(ValueError):
    """A queue is configured with arrival rate >= service rate."""


class ConfigurationError(ValueError):
    """Invalid configuration. ``field`` names the offending entry when known."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class InvalidManeuverError(ValueError):
    """A lane change was requested between non-adjacent lanes."""


class UndefinedRateError(ValueError):
    """A rate or frequency has a zero denominator."""


class ResolutionError(ValueError):
    """A signal is too short to resolve the requested frequency band."""
