"""Graph neural network anomaly classification for multivariate KPI time series."""

from telesto.errors import ConfigError, DataError, NumericalError, ShapeError, TelestoError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "ShapeError",
    "TelestoError",
    "__version__",
]
