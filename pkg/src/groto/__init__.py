"""groto: class-incremental source-free adaptation over feature embeddings.

Growing-prototype self-organization with topology distillation and
exemplar replay, simulated end to end on synthetic or ingested feature
data. All numerics are float64 numpy; hot kernels optionally run through
a compiled extension (see ``groto.backend.ACTIVE``).
"""

from .backend import ACTIVE as BACKEND
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DimensionError,
    EngineError,
    GrotoError,
    MiningError,
    NonFiniteError,
    PretrainError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "DimensionError",
    "EngineError",
    "GrotoError",
    "MiningError",
    "NonFiniteError",
    "PretrainError",
    "TrainingError",
    "__version__",
]
