"""Bike-share route reconstruction and AADB volume estimation."""

from bikeflow.errors import BikeflowError, ConfigError, DataError, NoPathError

__version__ = "0.1.0"

__all__ = ["BikeflowError", "ConfigError", "DataError", "NoPathError", "__version__"]
