"""Labeled multivariate time-series datasets.

Covers CSV ingestion of precomputed per-frame features, a synthetic
generator with controllable ordinal structure and class imbalance,
stratified splitting, and batch sampling for contrastive training.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, IngestionError, ParameterError

log = logging.getLogger(__name__)

ORIGIN_ORIGINAL = "original"
ORIGIN_AUGMENTED = "augmented"

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class FeatureLayout:
    """Column layout of raw per-frame feature vectors.

    Raw columns are ordered [valence, arousal, latent..., behavioral...].
    The fused width is what the latent-compression network produces per
    frame: affect + 32 + behavioral.
    """

    affect_dims: int = 2
    latent_dims: int = 256
    behavioral_dims: int = 12
    fused_latent_dims: int = 32

    @property
    def raw_width_with_latent(self) -> int:
        return self.affect_dims + self.latent_dims + self.behavioral_dims

    @property
    def raw_width_behavioral(self) -> int:
        return self.affect_dims + self.behavioral_dims

    @property
    def fused_width(self) -> int:
        return self.affect_dims + self.fused_latent_dims + self.behavioral_dims


class FeatureSequence:
    """One labeled sample: a T×D float matrix plus an ordinal label."""

    __slots__ = ("sample_id", "frames", "label", "origin")

    def __init__(self, sample_id: str, frames, label: int, origin: str = ORIGIN_ORIGINAL):
        frames = np.asarray(frames, dtype=np.float64)
        if frames.flags.writeable:
            frames = frames.copy()  # callers keep ownership of mutable input
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ContractError(
                f"sample {sample_id!r}: frames must be a T x D matrix with T >= 1, "
                f"got shape {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ContractError(f"sample {sample_id!r}: non-finite feature values")
        if origin not in (ORIGIN_ORIGINAL, ORIGIN_AUGMENTED):
            raise ParameterError(f"unknown origin {origin!r}")
        label = int(label)
        if label < 0:
            raise ContractError(f"sample {sample_id!r}: negative label {label}")
        if frames.flags.writeable:
            frames.flags.writeable = False
        self.sample_id = sample_id
        self.frames = frames
        self.label = label
        self.origin = origin

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]

    def __repr__(self) -> str:
        return (
            f"FeatureSequence({self.sample_id!r}, {self.n_frames}x{self.n_channels}, "
            f"label={self.label}, origin={self.origin})"
        )


class Dataset:
    """An immutable collection of sequences with a split tag.

    ``split`` is one of train/validation/test, or "all" for a container that
    has not been partitioned yet.  ``split_tags`` optionally records
    per-sample split assignments ingested from a labels file.
    """

    def __init__(
        self,
        sequences,
        split: str = "all",
        num_classes: int = 4,
        split_tags: dict[str, str] | None = None,
    ):
        if split not in SPLIT_NAMES and split != "all":
            raise ParameterError(f"unknown split {split!r}")
        if num_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {num_classes}")
        sequences = list(sequences)
        for s in sequences:
            if s.label >= num_classes:
                raise ContractError(
                    f"sample {s.sample_id!r}: label {s.label} out of range "
                    f"for {num_classes} classes"
                )
        self.sequences = sequences
        self.split = split
        self.num_classes = int(num_classes)
        self.split_tags = dict(split_tags) if split_tags else None

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for s in self.sequences:
            counts[s.label] += 1
        return counts

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sequences], dtype=np.int64)

    def sample_ids(self) -> list[str]:
        return [s.sample_id for s in self.sequences]

    def with_split(self, split: str) -> "Dataset":
        return Dataset(self.sequences, split=split, num_classes=self.num_classes)


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic ordinal dataset.

    Class-conditional means are strictly monotone in the class index; classes
    share all sinusoidal structure so that separability alone controls how
    far apart adjacent classes sit.
    """

    num_classes: int = 4
    frames: int = 50
    channels: int = 46
    counts: tuple[int, ...] | None = None  # per-class; defaults to 50 each
    separability: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def resolved_counts(self) -> tuple[int, ...]:
        if self.counts is None:
            return tuple([50] * self.num_classes)
        return tuple(int(c) for c in self.counts)


def class_distribution(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-class counts and fractions of a dataset."""
    if len(d) == 0:
        raise ContractError("class_distribution of an empty dataset")
    counts = d.class_counts
    fractions = counts / counts.sum()
    return counts, fractions


# ---------------------------------------------------------------------------
# CSV ingestion and serialization
#
# Features file: header sample_id,frame,f0,...,f{D-1}, one row per (sample,
# frame).  Labels file: header sample_id,label[,split].


def load_dataset(
    features_path,
    labels_path,
    layout: FeatureLayout | None = None,
    num_classes: int = 4,
    frame_stride: int = 1,
) -> Dataset:
    """Build a Dataset from a features CSV and a labels CSV.

    Frames must be contiguous from 0 per sample; every sample needs a label
    and every label needs feature rows.  ``frame_stride`` optionally
    subsamples frames after validation.
    """
    if frame_stride < 1:
        raise ParameterError(f"frame_stride must be >= 1, got {frame_stride}")

    labels, split_tags = _read_labels(labels_path, num_classes)
    order, rows = _read_feature_rows(features_path, labels)

    sequences = []
    for sid in order:
        if sid not in labels:
            # unreachable: _read_feature_rows rejects unlabeled samples
            raise IngestionError(f"sample {sid!r} has no label")
        frame_map = rows[sid]
        t = len(frame_map)
        for expect in range(t):
            if expect not in frame_map:
                raise IngestionError(f"sample {sid!r}: missing frame {expect}")
        frames = np.array([frame_map[i] for i in range(t)], dtype=np.float64)
        if frame_stride > 1:
            frames = frames[::frame_stride]
        sequences.append(FeatureSequence(sid, frames, labels[sid]))

    missing_features = sorted(set(labels) - set(order))
    if missing_features:
        raise IngestionError(
            f"labels reference samples with no feature rows: {missing_features[:5]}"
        )
    return Dataset(
        sequences,
        split="all",
        num_classes=num_classes,
        split_tags=split_tags or None,
    )


def _read_labels(path, num_classes):
    labels: dict[str, int] = {}
    split_tags: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty labels file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["sample_id", "label"] or len(header) > 3 or (
            len(header) == 3 and header[2] != "split"
        ):
            raise IngestionError(
                f"{path}: expected header sample_id,label[,split], got {header}"
            )
        has_split = len(header) == 3
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path} line {line_no}: ragged row")
            sid = row[0].strip()
            if sid in labels:
                raise IngestionError(
                    f"{path} line {line_no}: duplicate sample_id {sid!r}"
                )
            try:
                label = int(row[1])
            except ValueError:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} has non-integer "
                    f"label {row[1]!r}"
                ) from None
            if not 0 <= label < num_classes:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} label out of range "
                    f"(got {label}, classes {num_classes})"
                )
            labels[sid] = label
            if has_split:
                tag = row[2].strip()
                if tag not in SPLIT_NAMES:
                    raise IngestionError(
                        f"{path} line {line_no}: sample {sid!r} has unknown "
                        f"split {tag!r}"
                    )
                split_tags[sid] = tag
    if not labels:
        raise IngestionError(f"{path}: no labels found")
    return labels, split_tags


def _read_feature_rows(path, labels):
    order: list[str] = []
    rows: dict[str, dict[int, list[float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty features file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["sample_id", "frame"]:
            raise IngestionError(
                f"{path}: expected header starting sample_id,frame, got {header[:2]}"
            )
        width = len(header) - 2
        if width < 1:
            raise IngestionError(f"{path}: no feature columns")
        expected = [f"f{i}" for i in range(width)]
        if header[2:] != expected:
            raise IngestionError(
                f"{path}: feature columns must be f0..f{width - 1}, got {header[2:]}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            sid = row[0].strip()
            if len(row) != width + 2:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} ragged row "
                    f"({len(row)} fields, expected {width + 2})"
                )
            if sid not in labels:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} has no label entry"
                )
            try:
                frame = int(row[1])
            except ValueError:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} non-integer frame "
                    f"{row[1]!r}"
                ) from None
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} non-numeric feature"
                ) from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} non-finite feature value"
                )
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            if frame in rows[sid]:
                raise IngestionError(
                    f"{path} line {line_no}: sample {sid!r} duplicate frame {frame}"
                )
            rows[sid][frame] = values
    if not order:
        raise IngestionError(f"{path}: no feature rows found")
    return order, rows


def save_dataset(d: Dataset, features_path, labels_path, split_tags=None) -> None:
    """Write a dataset back to the features/labels CSV pair.

    Floats are emitted with shortest round-trip repr so load → save → load is
    the identity.  Origin flags are in-process metadata and are not written.
    """
    if len(d) == 0:
        raise ContractError("cannot serialize an empty dataset")
    width = d[0].n_channels
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "frame"] + [f"f{i}" for i in range(width)])
        for s in d:
            if s.n_channels != width:
                raise ContractError(
                    f"sample {s.sample_id!r} width {s.n_channels} != {width}"
                )
            for t in range(s.n_frames):
                writer.writerow(
                    [s.sample_id, t] + [repr(float(v)) for v in s.frames[t]]
                )
    tags = split_tags if split_tags is not None else d.split_tags
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if tags:
            writer.writerow(["sample_id", "label", "split"])
            for s in d:
                writer.writerow([s.sample_id, s.label, tags[s.sample_id]])
        else:
            writer.writerow(["sample_id", "label"])
            for s in d:
                writer.writerow([s.sample_id, s.label])


# ---------------------------------------------------------------------------
# synthetic generation


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic ordinal dataset.

    Channel j of a class-c sample is
        x[t, j] = c·separability + a_j·sin(2π·f_j·t/T + φ_j) + ε_t,
    with per-channel amplitude, frequency and phase drawn once per dataset
    and ε ~ N(0, noise_std²).  Classes therefore differ only by the mean
    shift, which makes class-conditional means strictly monotone in the
    class index and identical when separability is 0.
    """
    if spec.separability < 0:
        raise ParameterError(f"separability must be >= 0, got {spec.separability}")
    if spec.noise_std < 0:
        raise ParameterError(f"noise_std must be >= 0, got {spec.noise_std}")
    counts = spec.resolved_counts()
    if len(counts) != spec.num_classes:
        raise ParameterError(
            f"counts has {len(counts)} entries for {spec.num_classes} classes"
        )
    if any(c < 1 for c in counts):
        raise ParameterError("every requested class needs at least 1 sample")

    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    t_axis = np.arange(spec.frames) / spec.frames
    amp = rng.uniform(0.5, 1.5, size=spec.channels)
    freq = rng.uniform(1.0, 4.0, size=spec.channels)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.channels)
    carrier = amp * np.sin(2.0 * np.pi * freq * t_axis[:, None] + phase)  # T x D

    sequences = []
    idx = 0
    for c, n in enumerate(counts):
        base = c * spec.separability
        for _ in range(n):
            noise = (
                rng.normal(0.0, spec.noise_std, size=(spec.frames, spec.channels))
                if spec.noise_std > 0
                else 0.0
            )
            frames = base + carrier + noise
            sequences.append(FeatureSequence(f"synth-{idx:05d}", frames, c))
            idx += 1
    return Dataset(sequences, split="all", num_classes=spec.num_classes)


# ---------------------------------------------------------------------------
# splitting


def split_dataset(
    d: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified train/validation/test partition.

    Per class, seeded shuffle then largest-remainder allocation so split
    sizes track the fractions exactly.  Classes with fewer samples than
    splits go wholly to train with a warning.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must be 3 values summing to 1, got {fractions}")
    if len(d) == 0:
        raise ContractError("cannot split an empty dataset")

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5B117)))
    buckets: list[list[FeatureSequence]] = [[], [], []]
    for c in range(d.num_classes):
        members = [s for s in d if s.label == c]
        if not members:
            continue
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        if len(members) < 3:
            log.warning(
                "class %d has only %d sample(s); assigning all to train", c, len(members)
            )
            buckets[0].extend(members)
            continue
        counts = _largest_remainder(len(members), fractions)
        start = 0
        for b, k in enumerate(counts):
            buckets[b].extend(members[start : start + k])
            start += k
    return (
        Dataset(buckets[0], "train", d.num_classes),
        Dataset(buckets[1], "validation", d.num_classes),
        Dataset(buckets[2], "test", d.num_classes),
    )


def _largest_remainder(n: int, fractions) -> list[int]:
    ideal = [n * f for f in fractions]
    counts = [int(math.floor(x)) for x in ideal]
    remainder = n - sum(counts)
    order = sorted(
        range(len(fractions)), key=lambda i: (ideal[i] - counts[i], -i), reverse=True
    )
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def partition_by_tags(d: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Honor per-sample split tags ingested from a labels file."""
    if not d.split_tags:
        raise ContractError("dataset carries no split tags")
    by_tag: dict[str, list[FeatureSequence]] = {name: [] for name in SPLIT_NAMES}
    for s in d:
        tag = d.split_tags.get(s.sample_id)
        if tag is None:
            raise ContractError(f"sample {s.sample_id!r} has no split tag")
        by_tag[tag].append(s)
    return tuple(
        Dataset(by_tag[name], name, d.num_classes) for name in SPLIT_NAMES
    )


def merge_datasets(a: Dataset, b: Dataset, split: str = "train") -> Dataset:
    """Pool two splits (e.g. train + validation) into one training set."""
    if a.num_classes != b.num_classes:
        raise ContractError("cannot merge datasets with different class counts")
    return Dataset(list(a) + list(b), split=split, num_classes=a.num_classes)


# ---------------------------------------------------------------------------
# batch sampling


def sample_batch(
    d: Dataset, size: int, mode: str = "class_balanced", rng: np.random.Generator | None = None
) -> list[FeatureSequence]:
    """Draw a batch of sequences.

    ``class_balanced`` draws ⌈size/C⌉ per present class (with replacement
    when a class is short), shuffles, truncates to ``size``, and guarantees
    at least one same-label pair whenever size >= 2.  ``uniform`` draws with
    replacement from the whole dataset.
    """
    if len(d) == 0:
        raise ContractError("cannot sample from an empty dataset")
    if size < 2:
        raise ContractError(f"batch size must be >= 2, got {size}")
    if rng is None:
        rng = np.random.default_rng()

    if mode == "uniform":
        idx = rng.integers(0, len(d), size=size)
        return [d[int(i)] for i in idx]
    if mode != "class_balanced":
        raise ParameterError(f"unknown sampling mode {mode!r}")

    by_class: dict[int, list[FeatureSequence]] = {}
    for s in d:
        by_class.setdefault(s.label, []).append(s)
    present = sorted(by_class)
    per_class = math.ceil(size / len(present))
    pool: list[FeatureSequence] = []
    for c in present:
        members = by_class[c]
        if len(members) >= per_class:
            chosen = rng.choice(len(members), size=per_class, replace=False)
        else:
            chosen = rng.integers(0, len(members), size=per_class)
        pool.extend(members[int(i)] for i in chosen)
    order = rng.permutation(len(pool))
    batch = [pool[int(i)] for i in order][:size]

    # A positive pair must survive truncation for the contrastive loss to
    # have a non-empty positive set.
    labels = [s.label for s in batch]
    if len(set(labels)) == len(labels):
        anchor = batch[0]
        members = by_class[anchor.label]
        batch[-1] = members[int(rng.integers(0, len(members)))]
    return batch
