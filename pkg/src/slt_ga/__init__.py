"""Strong lottery tickets in random networks found by a genetic algorithm over binary masks."""

from . import analysis, baselines, datasets, ga, landscape, net
from .errors import (ArchitectureError, ConfigError, EmptyDataError, FormatError, NumericsError, ShapeError,
                     SltError, StatError)

__version__ = "0.1.0"

__all__ = [
    "analysis", "baselines", "datasets", "ga", "landscape", "net",
    "ArchitectureError", "ConfigError", "EmptyDataError", "FormatError", "NumericsError", "ShapeError",
    "SltError", "StatError",
]
