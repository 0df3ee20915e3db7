"""Binary-weight two-layer networks analysed through their quasi network."""
from .backend import BACKEND
from .errors import ConfigError, DataError, DomainError, QbwnnError, TrainingDiverged
from .num_core import Rng, rng_version

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "DataError", "DomainError", "QbwnnError",
    "TrainingDiverged", "Rng", "rng_version", "__version__",
]
