"""Exception hierarchy shared by every module."""


class PollenSimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(PollenSimError, ValueError):
    """Invalid configuration value. ``field`` names the offending key path,
    ``source`` the file it came from (if any)."""

    def __init__(self, field: str, message: str, source: str | None = None):
        self.field = field
        self.message = message
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__(f"{prefix}{field}: {message}")


class DomainError(PollenSimError, ValueError):
    pass


class CohortError(PollenSimError):
    pass


class PlacementError(PollenSimError):
    pass


class FitError(PollenSimError):
    pass


class InsufficientDataError(FitError):
    pass


class AggregationError(PollenSimError):
    pass


class EngineError(PollenSimError):
    pass
