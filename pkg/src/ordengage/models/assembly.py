"""Model assembly: feature staging, full classifier stacks, fingerprints."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..data import FeatureLayout
from ..diffcore import Tensor, concat, narrow, reshape, sigmoid, softmax
from ..errors import ParameterError, ShapeError
from .nets import (
    ClassifierHead,
    FusionNet,
    FusionConfig,
    HeadConfig,
    LstmConfig,
    LstmEncoder,
    TcnConfig,
    TcnEncoder,
)

FEATURE_MODES = ("direct", "affect_behavioral", "affect_behavioral_latent")


def stack_sequences(sequences) -> np.ndarray:
    """Stack sequences into an (N, T, D) batch; requires uniform T and D."""
    if not sequences:
        raise ShapeError("cannot stack an empty batch")
    t, d = sequences[0].frames.shape
    for s in sequences:
        if s.frames.shape != (t, d):
            raise ShapeError(
                f"sample {s.sample_id!r} has shape {s.frames.shape}, batch expects {(t, d)}"
            )
    return np.stack([s.frames for s in sequences])


class FeatureStage:
    """Maps raw per-frame features to encoder inputs for one feature mode.

    direct:                   frames pass through unchanged.
    affect_behavioral:        keep the 2 affect and 12 behavioral columns.
    affect_behavioral_latent: compress the 256 latent columns to 32 through
                              the fusion network and concatenate
                              [affect, fused, behavioral].
    """

    def __init__(self, mode: str, layout: FeatureLayout, fusion: FusionNet | None):
        if mode not in FEATURE_MODES:
            raise ParameterError(f"unknown feature mode {mode!r}")
        if mode == "affect_behavioral_latent" and fusion is None:
            raise ParameterError("latent feature mode requires a fusion network")
        self.mode = mode
        self.layout = layout
        self.fusion = fusion if mode == "affect_behavioral_latent" else None

    def output_dim(self, input_dim: int) -> int:
        if self.mode == "direct":
            return input_dim
        if self.mode == "affect_behavioral":
            if input_dim == self.layout.raw_width_behavioral:
                return input_dim
            self._require(input_dim, self.layout.raw_width_with_latent)
            return self.layout.raw_width_behavioral
        self._require(input_dim, self.layout.raw_width_with_latent)
        return self.layout.fused_width

    def _require(self, input_dim: int, expected: int) -> None:
        if input_dim != expected:
            raise ShapeError(
                f"feature mode {self.mode!r} expects {expected} raw channels, "
                f"got {input_dim}"
            )

    def forward(self, x: Tensor) -> Tensor:
        """x: (N, T, D_raw) → (N, T, D_model)."""
        if self.mode == "direct":
            return x
        lay = self.layout
        n, t, d = x.data.shape
        if self.mode == "affect_behavioral":
            if d == lay.raw_width_behavioral:
                return x
            self._require(d, lay.raw_width_with_latent)
            affect = narrow(x, 2, 0, lay.affect_dims)
            behavioral = narrow(x, 2, lay.affect_dims + lay.latent_dims, lay.behavioral_dims)
            return concat([affect, behavioral], axis=2)
        self._require(d, lay.raw_width_with_latent)
        affect = narrow(x, 2, 0, lay.affect_dims)
        latent = narrow(x, 2, lay.affect_dims, lay.latent_dims)
        behavioral = narrow(x, 2, lay.affect_dims + lay.latent_dims, lay.behavioral_dims)
        flat = reshape(latent, (n * t, lay.latent_dims))
        fused = reshape(self.fusion(flat), (n, t, lay.fused_latent_dims))
        return concat([affect, fused, behavioral], axis=2)

    def parameters(self):
        return self.fusion.parameters() if self.fusion else []


class SequenceClassifier:
    """Feature stage + sequence encoder + classifier head.

    ``meta`` is the canonical architecture description used for checkpoint
    fingerprints and rebuilds.
    """

    def __init__(self, stage: FeatureStage, encoder, head: ClassifierHead, meta: dict):
        self.stage = stage
        self.encoder = encoder
        self.head = head
        self.meta = meta

    @property
    def num_classes(self) -> int:
        return self.head.cfg.num_classes

    def embed(self, x: Tensor, rng=None) -> Tensor:
        return self.encoder.forward(self.stage.forward(x), rng=rng)

    def logits(self, x: Tensor, rng=None) -> Tensor:
        return self.head.forward(self.embed(x, rng=rng))

    def predict_proba(self, frames_batch: np.ndarray) -> np.ndarray:
        """Evaluation-mode class probabilities for an (N, T, D) array.

        Softmax over classes for multi-class heads, sigmoid for single-logit
        binary heads (returning the probability of the positive side).
        """
        logits = self.logits(Tensor(frames_batch), rng=None)
        if self.num_classes == 1:
            return sigmoid(logits).data.reshape(-1)
        return softmax(logits).data

    def encoder_parameters(self) -> dict[str, Tensor]:
        params = self.stage.parameters() + self.encoder.parameters()
        return {p.name: p for p in params}

    def parameters(self) -> dict[str, Tensor]:
        params = self.stage.parameters() + self.encoder.parameters() + self.head.parameters()
        return {p.name: p for p in params}

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())


def build_model(meta: dict, rng: np.random.Generator) -> SequenceClassifier:
    """Construct a SequenceClassifier from its canonical meta description.

    meta keys: encoder ("lstm"|"tcn"), feature_mode, input_dim, num_classes,
    and per-encoder size sections ("lstm": {hidden, layers} or
    "tcn": {levels, hidden, kernel, dropout, pool}).
    """
    layout = FeatureLayout()
    fusion = None
    if meta["feature_mode"] == "affect_behavioral_latent":
        fusion = FusionNet(FusionConfig(latent_dims=layout.latent_dims), rng)
    stage = FeatureStage(meta["feature_mode"], layout, fusion)
    encoder_input = stage.output_dim(meta["input_dim"])

    kind = meta["encoder"]
    if kind == "lstm":
        sizes = meta.get("lstm", {})
        cfg = LstmConfig(
            input_dim=encoder_input,
            hidden=sizes.get("hidden", 256),
            layers=sizes.get("layers", 2),
        )
        encoder = LstmEncoder(cfg, rng)
    elif kind == "tcn":
        sizes = meta.get("tcn", {})
        cfg = TcnConfig(
            input_dim=encoder_input,
            levels=sizes.get("levels", 8),
            hidden=sizes.get("hidden", 256),
            kernel=sizes.get("kernel", 16),
            dropout=sizes.get("dropout", 0.1),
            pool=sizes.get("pool", "last"),
        )
        encoder = TcnEncoder(cfg, rng)
    else:
        raise ParameterError(f"unknown encoder kind {kind!r}")

    head_cfg = HeadConfig(
        embed_dim=encoder.output_dim,
        hidden=meta.get("head_hidden", 128),
        num_classes=meta["num_classes"],
    )
    head = ClassifierHead(head_cfg, rng)
    return SequenceClassifier(stage, encoder, head, canonical_meta(meta))


def canonical_meta(meta: dict) -> dict:
    """Normalize a meta dict so fingerprints are stable."""
    out = {
        "encoder": meta["encoder"],
        "feature_mode": meta["feature_mode"],
        "input_dim": int(meta["input_dim"]),
        "num_classes": int(meta["num_classes"]),
        "head_hidden": int(meta.get("head_hidden", 128)),
    }
    if meta["encoder"] == "lstm":
        sizes = meta.get("lstm", {})
        out["lstm"] = {
            "hidden": int(sizes.get("hidden", 256)),
            "layers": int(sizes.get("layers", 2)),
        }
    else:
        sizes = meta.get("tcn", {})
        out["tcn"] = {
            "levels": int(sizes.get("levels", 8)),
            "hidden": int(sizes.get("hidden", 256)),
            "kernel": int(sizes.get("kernel", 16)),
            "dropout": float(sizes.get("dropout", 0.1)),
            "pool": sizes.get("pool", "last"),
        }
    return out


def meta_fingerprint(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def parameter_checksum(params: dict[str, Tensor]) -> str:
    """Order-independent digest of named parameter values."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()
