"""Training protocol, strategy dispatch, evaluation metrics, ablation runner.

Strategies mirror the ablation grid rows:

    a        cross-entropy, end to end
    b        class-weighted cross-entropy, end to end
    c        contrastive phase 1 + cross-entropy phase 2
    d        contrastive phase 1 + weighted cross-entropy phase 2
    e        augmentation + c
    f        augmentation + per-threshold (contrastive + binary head), ordinal
    a_prime  augmentation + per-threshold end-to-end BCE, ordinal
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, apply_policy
from .data import Dataset, FeatureSequence, sample_batch
from .diffcore import Optimizer, Tape, Tensor, backward
from .errors import ConfigError, ContractError, LeakageError
from .losses import (
    ClassWeights,
    binary_cross_entropy,
    compute_class_weights,
    cross_entropy,
    supcon_loss,
)
from .models import (
    ProjectionHead,
    SequenceClassifier,
    build_model,
    parameter_checksum,
    stack_sequences,
)
from .ordinal import OrdinalEnsemble, relabel_binary

log = logging.getLogger(__name__)

STRATEGIES = {
    # name -> (contrastive phase, augmentation, ordinal decomposition, weighted CE)
    "a": (False, False, False, False),
    "b": (False, False, False, True),
    "c": (True, False, False, False),
    "d": (True, False, False, True),
    "e": (True, True, False, False),
    "f": (True, True, True, False),
    "a_prime": (False, True, True, False),
}

STRATEGY_ALIASES = {
    "ce": "a",
    "weighted_ce": "b",
    "contrastive_ce": "c",
    "contrastive_weighted_ce": "d",
    "contrastive_ce_augmented": "e",
    "contrastive_ce_augmented_ordinal": "f",
    "ce_augmented_ordinal": "a_prime",
}

EVAL_CHUNK = 128


@dataclass
class TrainConfig:
    """Everything one training run needs besides the data itself."""

    strategy: str = "a"
    encoder: str = "tcn"
    features: str = "direct"
    num_classes: int = 4
    temperature: float = 0.1
    epochs_phase1: int = 100
    epochs_phase2: int = 50
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    augment: AugmentPolicy | None = None
    lstm_hidden: int = 256
    lstm_layers: int = 2
    tcn_levels: int = 8
    tcn_hidden: int = 256
    tcn_kernel: int = 16
    tcn_dropout: float = 0.1
    pool: str = "last"
    head_hidden: int = 128
    ordinal_shared_encoder: bool = False

    def __post_init__(self):
        self.strategy = STRATEGY_ALIASES.get(self.strategy, self.strategy)
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; expected one of "
                f"{sorted(STRATEGIES)} (or a long-name alias)"
            )
        _, augmented, _, _ = STRATEGIES[self.strategy]
        if augmented and self.augment is None:
            raise ConfigError(
                f"strategy {self.strategy!r} requires an augment policy"
            )
        if not augmented and self.augment is not None:
            raise ConfigError(
                f"strategy {self.strategy!r} forbids an augment policy"
            )
        if self.encoder not in ("lstm", "tcn"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if min(self.epochs_phase1, self.epochs_phase2) < 0:
            raise ConfigError("epoch counts must be >= 0")

    @property
    def contrastive(self) -> bool:
        return STRATEGIES[self.strategy][0]

    @property
    def augmented(self) -> bool:
        return STRATEGIES[self.strategy][1]

    @property
    def ordinal(self) -> bool:
        return STRATEGIES[self.strategy][2]

    @property
    def weighted(self) -> bool:
        return STRATEGIES[self.strategy][3]

    def model_meta(self, input_dim: int, num_classes: int) -> dict:
        meta = {
            "encoder": self.encoder,
            "feature_mode": self.features,
            "input_dim": int(input_dim),
            "num_classes": int(num_classes),
            "head_hidden": self.head_hidden,
        }
        if self.encoder == "lstm":
            meta["lstm"] = {"hidden": self.lstm_hidden, "layers": self.lstm_layers}
        else:
            meta["tcn"] = {
                "levels": self.tcn_levels,
                "hidden": self.tcn_hidden,
                "kernel": self.tcn_kernel,
                "dropout": self.tcn_dropout,
                "pool": self.pool,
            }
        return meta

    def to_dict(self) -> dict:
        out = {
            "strategy": self.strategy,
            "encoder": self.encoder,
            "features": self.features,
            "num_classes": self.num_classes,
            "temperature": self.temperature,
            "epochs_phase1": self.epochs_phase1,
            "epochs_phase2": self.epochs_phase2,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "lstm_hidden": self.lstm_hidden,
            "lstm_layers": self.lstm_layers,
            "tcn_levels": self.tcn_levels,
            "tcn_hidden": self.tcn_hidden,
            "tcn_kernel": self.tcn_kernel,
            "tcn_dropout": self.tcn_dropout,
            "pool": self.pool,
            "head_hidden": self.head_hidden,
            "ordinal_shared_encoder": self.ordinal_shared_encoder,
            "augment": self.augment.to_dict() if self.augment else None,
        }
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunReport:
    """Evaluation summary: accuracy, per-class precision/recall, confusion."""

    accuracy: float
    precision: np.ndarray  # (C,), 0.0 where the predicted column is empty
    recall: np.ndarray  # (C,)
    confusion: np.ndarray  # (C, C), rows = true, columns = predicted
    config_fingerprint: str
    seed: int
    wall_clock_s: float
    features: str = "direct"
    encoder: str = "tcn"
    strategy: str = "a"
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        self.precision = np.asarray(self.precision, dtype=np.float64)
        self.recall = np.asarray(self.recall, dtype=np.float64)
        total = self.confusion.sum()
        if total == 0:
            raise ContractError("empty confusion matrix")
        trace = np.trace(self.confusion)
        if abs(self.accuracy - trace / total) > 1e-12:
            raise ContractError(
                f"accuracy {self.accuracy} inconsistent with confusion "
                f"trace/total {trace / total}"
            )

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": [float(v) for v in self.precision],
            "recall": [float(v) for v in self.recall],
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "config_fingerprint": self.config_fingerprint,
            "seed": self.seed,
            "wall_clock_s": self.wall_clock_s,
            "features": self.features,
            "encoder": self.encoder,
            "strategy": self.strategy,
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(
            accuracy=d["accuracy"],
            precision=np.asarray(d["precision"]),
            recall=np.asarray(d["recall"]),
            confusion=np.asarray(d["confusion"]),
            config_fingerprint=d["config_fingerprint"],
            seed=d["seed"],
            wall_clock_s=d["wall_clock_s"],
            features=d.get("features", "direct"),
            encoder=d.get("encoder", "tcn"),
            strategy=d.get("strategy", "a"),
            diagnostics=d.get("diagnostics", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


@dataclass
class PipelineResult:
    """A trained model plus the audit trail the test suite asserts on."""

    model: SequenceClassifier | OrdinalEnsemble
    config: TrainConfig
    train_sample_ids: set[str]
    train_data: Dataset
    encoder_checksums: dict[str, tuple[str, str]]
    phase1_losses: dict[str, list[float]]
    phase2_losses: dict[str, list[float]]
    diagnostics: dict


# ---------------------------------------------------------------------------
# internals


def _rng_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _make_optimizer(cfg: TrainConfig) -> Optimizer:
    return Optimizer(
        kind=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
    )


def _minibatch_indices(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start : start + batch]


def _labels_for(data: Dataset, override: np.ndarray | None) -> np.ndarray:
    return data.labels() if override is None else override


def train_phase1(
    data: Dataset,
    config: TrainConfig,
    model: SequenceClassifier,
    projection: ProjectionHead,
    batch_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    labels_override: np.ndarray | None = None,
) -> tuple[list[float], dict]:
    """Contrastive representation learning on class-balanced batches.

    Trains the feature stage, encoder, and projection head by minimizing the
    supervised contrastive loss.  ``labels_override`` swaps in relabeled
    targets (the ordinal binary tasks) and batch balancing then follows the
    relabeled classes.  Batches where no anchor has a positive are counted;
    an epoch where every batch is degenerate aborts.
    """
    if labels_override is not None:
        relabeled = [
            FeatureSequence(s.sample_id, s.frames, int(t), origin=s.origin)
            for s, t in zip(data, labels_override)
        ]
        data = Dataset(
            relabeled, split=data.split,
            num_classes=max(2, int(np.max(labels_override)) + 1),
        )

    params = {p.name: p for p in model.stage.parameters() + model.encoder.parameters()}
    params.update({p.name: p for p in projection.parameters()})
    opt = _make_optimizer(config)

    steps_per_epoch = max(1, math.ceil(len(data) / config.batch_size))
    losses: list[float] = []
    degenerate_batches = 0
    for epoch in range(config.epochs_phase1):
        degenerate_this_epoch = 0
        for _ in range(steps_per_epoch):
            batch = sample_batch(data, config.batch_size, "class_balanced", batch_rng)
            x = Tensor(stack_sequences(batch))
            y = np.array([s.label for s in batch])
            with Tape() as tape:
                emb = model.embed(x, rng=dropout_rng)
                z = projection.forward(emb)
                loss, diag = supcon_loss(z, y, config.temperature)
                grads = backward(tape, loss)
            if diag["anchors_without_positives"] == diag["batch_size"]:
                degenerate_batches += 1
                degenerate_this_epoch += 1
                continue  # zero gradient everywhere; skip the step
            opt.step(params, grads)
            losses.append(loss.item())
        if degenerate_this_epoch == steps_per_epoch:
            raise ContractError(
                "every batch in a contrastive epoch lacked positive pairs; "
                "use class_balanced sampling or a larger batch size"
            )
    return losses, {"degenerate_batches": degenerate_batches}


def _embed_dataset(model: SequenceClassifier, data: Dataset) -> np.ndarray:
    """Evaluation-mode embeddings for every sequence, in dataset order."""
    chunks = []
    for start in range(0, len(data), EVAL_CHUNK):
        batch = data.sequences[start : start + EVAL_CHUNK]
        chunks.append(model.embed(Tensor(stack_sequences(batch)), rng=None).data)
    return np.concatenate(chunks, axis=0)


def train_phase2(
    data: Dataset,
    config: TrainConfig,
    model: SequenceClassifier,
    head_rng: np.random.Generator,
    labels_override: np.ndarray | None = None,
    weights: ClassWeights | None = None,
    binary: bool = False,
) -> tuple[list[float], tuple[str, str]]:
    """Train the classifier head on frozen representations.

    The encoder (and fusion stage) is run once in evaluation mode to produce
    embeddings; only head parameters receive updates.  Returns the loss
    trajectory and the (before, after) encoder checksums.
    """
    labels = _labels_for(data, labels_override)
    before = parameter_checksum(model.encoder_parameters())
    embeddings = _embed_dataset(model, data)
    head_params = {p.name: p for p in model.head.parameters()}
    opt = _make_optimizer(config)
    losses: list[float] = []
    n = embeddings.shape[0]
    for epoch in range(config.epochs_phase2):
        for idx in _minibatch_indices(n, config.batch_size, head_rng):
            xb = Tensor(embeddings[idx])
            yb = labels[idx]
            with Tape() as tape:
                logits = model.head.forward(xb)
                if binary:
                    loss = binary_cross_entropy(logits, yb)
                else:
                    loss = cross_entropy(logits, yb, weights)
                grads = backward(tape, loss)
            opt.step(head_params, grads)
            losses.append(loss.item())
    after = parameter_checksum(model.encoder_parameters())
    if before != after:
        raise ContractError("encoder parameters changed during phase 2 (freeze violated)")
    return losses, (before, after)


def _train_end_to_end(
    data: Dataset,
    config: TrainConfig,
    model: SequenceClassifier,
    batch_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    labels_override: np.ndarray | None = None,
    weights: ClassWeights | None = None,
    binary: bool = False,
) -> list[float]:
    """Joint (weighted) cross-entropy or BCE training of the whole stack."""
    labels = _labels_for(data, labels_override)
    params = model.parameters()
    opt = _make_optimizer(config)
    losses: list[float] = []
    sequences = data.sequences
    # end-to-end strategies reuse the phase-1 epoch budget
    for epoch in range(config.epochs_phase1):
        for idx in _minibatch_indices(len(sequences), config.batch_size, batch_rng):
            batch = [sequences[int(i)] for i in idx]
            x = Tensor(stack_sequences(batch))
            yb = labels[idx]
            with Tape() as tape:
                logits = model.logits(x, rng=dropout_rng)
                if binary:
                    loss = binary_cross_entropy(logits, yb)
                else:
                    loss = cross_entropy(logits, yb, weights)
                grads = backward(tape, loss)
            opt.step(params, grads)
            losses.append(loss.item())
    return losses


# ---------------------------------------------------------------------------
# public drivers


def train_pipeline(config: TrainConfig, train_data: Dataset) -> PipelineResult:
    """Dispatch one training strategy over a (train+validation) dataset."""
    config.validate()
    if train_data.split == "test":
        raise LeakageError("refusing to train on a test split")
    if len(train_data) == 0:
        raise ContractError("empty training dataset")

    data = train_data
    if config.augmented:
        data = apply_policy(data, config.augment)

    c = data.num_classes
    input_dim = data[0].n_channels
    init_rng, batch_rng, dropout_rng, head_rng = _rng_streams(config.seed, 4)

    result = PipelineResult(
        model=None,
        config=config,
        train_sample_ids=set(data.sample_ids()),
        train_data=data,
        encoder_checksums={},
        phase1_losses={},
        phase2_losses={},
        diagnostics={},
    )

    weights = compute_class_weights(data.class_counts) if config.weighted else None

    if not config.ordinal:
        model = build_model(config.model_meta(input_dim, c), init_rng)
        if config.contrastive:
            projection = ProjectionHead(model.encoder.output_dim, config.head_hidden, init_rng)
            p1_losses, diag = train_phase1(
                data, config, model, projection, batch_rng, dropout_rng
            )
            result.phase1_losses["model"] = p1_losses
            result.diagnostics["phase1"] = diag
            p2_losses, checksums = train_phase2(data, config, model, head_rng, weights=weights)
            result.phase2_losses["model"] = p2_losses
            result.encoder_checksums["model"] = checksums
        else:
            result.phase2_losses["model"] = _train_end_to_end(
                data, config, model, batch_rng, dropout_rng, weights=weights
            )
        result.model = model
        return result

    # ordinal strategies: one binary pipeline per threshold
    members = []
    labels = data.labels()
    shared_model = None
    if config.ordinal_shared_encoder and config.contrastive:
        shared_model = build_model(config.model_meta(input_dim, 1), init_rng)
        projection = ProjectionHead(shared_model.encoder.output_dim, config.head_hidden, init_rng)
        p1_losses, diag = train_phase1(
            data, config, shared_model, projection, batch_rng, dropout_rng
        )
        result.phase1_losses["shared"] = p1_losses
        result.diagnostics["phase1-shared"] = diag

    for threshold in range(c - 1):
        key = f"member{threshold}"
        binary_labels = relabel_binary(labels, threshold, num_classes=c)
        if binary_labels.min() == binary_labels.max():
            raise ContractError(
                f"binary task y > {threshold} has a single class even after "
                f"augmentation; oversample the missing side before training"
            )
        if shared_model is not None:
            member = SequenceClassifier(
                shared_model.stage,
                shared_model.encoder,
                build_model(config.model_meta(input_dim, 1), init_rng).head,
                shared_model.meta,
            )
            p2_losses, checksums = train_phase2(
                data, config, member, head_rng,
                labels_override=binary_labels, binary=True,
            )
            result.phase2_losses[key] = p2_losses
            result.encoder_checksums[key] = checksums
        elif config.contrastive:
            member = build_model(config.model_meta(input_dim, 1), init_rng)
            projection = ProjectionHead(member.encoder.output_dim, config.head_hidden, init_rng)
            p1_losses, diag = train_phase1(
                data, config, member, projection, batch_rng, dropout_rng,
                labels_override=binary_labels,
            )
            result.phase1_losses[key] = p1_losses
            result.diagnostics[f"phase1-{key}"] = diag
            p2_losses, checksums = train_phase2(
                data, config, member, head_rng,
                labels_override=binary_labels, binary=True,
            )
            result.phase2_losses[key] = p2_losses
            result.encoder_checksums[key] = checksums
        else:  # a_prime: end-to-end BCE per threshold
            member = build_model(config.model_meta(input_dim, 1), init_rng)
            result.phase2_losses[key] = _train_end_to_end(
                data, config, member, batch_rng, dropout_rng,
                labels_override=binary_labels, binary=True,
            )
        members.append(member)

    result.model = OrdinalEnsemble(members, num_classes=c)
    return result


def metrics_from_confusion(confusion: np.ndarray):
    """(accuracy, precision, recall, empty predicted columns) of a confusion matrix."""
    confusion = np.asarray(confusion, dtype=np.int64)
    total = confusion.sum()
    if total == 0:
        raise ContractError("empty confusion matrix")
    accuracy = float(np.trace(confusion)) / float(total)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    diag = np.diag(confusion).astype(np.float64)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    empty_columns = [int(i) for i in np.flatnonzero(col == 0)]
    return accuracy, precision, recall, empty_columns


def evaluate(
    model: SequenceClassifier | OrdinalEnsemble,
    test_data: Dataset,
    config_fingerprint: str = "",
    seed: int = 0,
    features: str = "direct",
    encoder: str = "tcn",
    strategy: str = "a",
) -> RunReport:
    """Deterministic evaluation-mode metrics on an untouched test split."""
    if len(test_data) == 0:
        raise ContractError("cannot evaluate on an empty test split")
    if any(s.origin != "original" for s in test_data):
        raise LeakageError("test split contains augmented samples")

    started = time.perf_counter()
    c = test_data.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    diagnostics: dict = {}
    clamped = 0
    for start in range(0, len(test_data), EVAL_CHUNK):
        batch = test_data.sequences[start : start + EVAL_CHUNK]
        frames = stack_sequences(batch)
        truth = np.array([s.label for s in batch])
        if isinstance(model, OrdinalEnsemble):
            predicted, _, diag = model.predict_batch(frames)
            clamped += diag["clamped_samples"]
        else:
            proba = model.predict_proba(frames)
            predicted = proba.argmax(axis=1)
        for t, p in zip(truth, predicted):
            confusion[int(t), int(p)] += 1

    accuracy, precision, recall, empty_columns = metrics_from_confusion(confusion)
    if empty_columns:
        diagnostics["empty_predicted_columns"] = empty_columns
    if isinstance(model, OrdinalEnsemble):
        diagnostics["clamped_samples"] = clamped
    return RunReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        confusion=confusion,
        config_fingerprint=config_fingerprint,
        seed=seed,
        wall_clock_s=time.perf_counter() - started,
        features=features,
        encoder=encoder,
        strategy=strategy,
        diagnostics=diagnostics,
    )


def run_ablation(
    configs: list[TrainConfig],
    train_data: Dataset,
    test_data: Dataset,
    seed: int | None = None,
) -> list[dict]:
    """Run every config over shared data; cell failures never abort the grid.

    Returns one dict per cell: {"config", "report"} on success or
    {"config", "error"} on failure.  When ``seed`` is given it overrides each
    cell's seed so that cells differ only in their declared axes.
    """
    cells = []
    for cfg in configs:
        if seed is not None:
            cfg.seed = seed
        started = time.perf_counter()
        try:
            result = train_pipeline(cfg, train_data)
            report = evaluate(
                result.model,
                test_data,
                config_fingerprint=cfg.fingerprint(),
                seed=cfg.seed,
                features=cfg.features,
                encoder=cfg.encoder,
                strategy=cfg.strategy,
            )
            report.wall_clock_s = time.perf_counter() - started
            cells.append({"config": cfg, "report": report})
        except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
            log.warning("ablation cell %s/%s failed: %s", cfg.encoder, cfg.strategy, exc)
            cells.append({"config": cfg, "error": f"{type(exc).__name__}: {exc}"})
    return cells
