"""Sequence encoders, fusion network, heads, and checkpoint serialization."""

from .assembly import (
    FEATURE_MODES,
    FeatureStage,
    SequenceClassifier,
    build_model,
    canonical_meta,
    meta_fingerprint,
    parameter_checksum,
    stack_sequences,
)
from .checkpoint import (
    load_checkpoint,
    load_ensemble,
    save_checkpoint,
    save_ensemble,
)
from .nets import (
    ClassifierHead,
    Dense,
    FusionConfig,
    FusionNet,
    HeadConfig,
    LstmConfig,
    LstmEncoder,
    ProjectionHead,
    TcnConfig,
    TcnEncoder,
    fusion_forward,
)

__all__ = [
    "FEATURE_MODES",
    "FeatureStage",
    "SequenceClassifier",
    "build_model",
    "canonical_meta",
    "meta_fingerprint",
    "parameter_checksum",
    "stack_sequences",
    "load_checkpoint",
    "load_ensemble",
    "save_checkpoint",
    "save_ensemble",
    "ClassifierHead",
    "Dense",
    "FusionConfig",
    "FusionNet",
    "HeadConfig",
    "LstmConfig",
    "LstmEncoder",
    "ProjectionHead",
    "TcnConfig",
    "TcnEncoder",
    "fusion_forward",
]
