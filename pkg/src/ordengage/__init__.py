"""Supervised contrastive ordinal classification for imbalanced
multivariate time series, on a from-scratch differentiable core.

Subpackages and modules:

- ``diffcore``: tensors, tape autodiff, gradient checking, optimizers
- ``data``: datasets, CSV ingestion, synthetic generation, sampling
- ``augment``: label-preserving transforms and oversampling policy
- ``models``: LSTM/TCN encoders, fusion, heads, checkpoints
- ``losses``: supervised contrastive, (weighted) cross-entropy, BCE
- ``ordinal``: binary decomposition and probability recombination
- ``pipeline``: two-phase training protocol, evaluation, ablation
- ``cli``: command-line interface and report emission
"""

from . import augment, config, data, diffcore, losses, models, ordinal, pipeline
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    IngestionError,
    LeakageError,
    NumericError,
    OrdengageError,
    ParameterError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "augment",
    "config",
    "data",
    "diffcore",
    "losses",
    "models",
    "ordinal",
    "pipeline",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "IngestionError",
    "LeakageError",
    "NumericError",
    "OrdengageError",
    "ParameterError",
    "ShapeError",
    "__version__",
]
