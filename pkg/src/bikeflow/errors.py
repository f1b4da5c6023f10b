class BikeflowError(Exception):
    """Base class for all errors raised by bikeflow."""


class ConfigError(BikeflowError):
    """Bad or missing configuration value."""


class DataError(BikeflowError, ValueError):
    """Input data that cannot be parsed or violates an invariant.

    ``locator`` names where the problem is (``path:line`` or a feature index)
    so the CLI can report it.
    """

    def __init__(self, message, locator=None):
        self.locator = locator
        if locator is not None:
            message = f"{locator}: {message}"
        super().__init__(message)


class NoPathError(BikeflowError):
    """No route between two matched nodes, even after remapping."""

    def __init__(self, trip_id, source, target):
        self.trip_id = trip_id
        self.source = source
        self.target = target
        super().__init__(f"trip {trip_id}: no path from node {source} to node {target}")
