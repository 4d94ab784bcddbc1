"""Label-preserving time-series augmentations and class-targeted oversampling.

All transforms keep T, D, and the label fixed; outputs are flagged
origin="augmented".  Each is a pure function of (sequence, parameters,
rng stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    Dataset,
    FeatureSequence,
    ORIGIN_AUGMENTED,
    ORIGIN_ORIGINAL,
)
from .errors import LeakageError, ParameterError

TRANSFORM_NAMES = ("jitter", "scale", "shift", "permute", "flip")
FLIP_MODES = ("time_reverse", "value_mirror")


def _default_factors() -> dict[int, float]:
    # minority classes x10, majority classes x1.5
    return {0: 10.0, 1: 10.0, 2: 1.5, 3: 1.5}


@dataclass
class AugmentPolicy:
    """Per-class oversampling factors and per-transform parameters."""

    oversample_factors: dict[int, float] = field(default_factory=_default_factors)
    transforms: tuple[str, ...] = TRANSFORM_NAMES
    jitter_ptp_fraction: float = 0.1
    scale_low: float = 0.75
    scale_high: float = 1.25
    shift_units: int = 5
    permute_segments: int = 4
    flip_mode: str = "time_reverse"
    seed: int = 0

    def __post_init__(self):
        for c, f in self.oversample_factors.items():
            if f < 1.0:
                raise ParameterError(f"oversample factor for class {c} must be >= 1, got {f}")
        unknown = set(self.transforms) - set(TRANSFORM_NAMES)
        if unknown:
            raise ParameterError(f"unknown transforms {sorted(unknown)}")
        if not self.transforms:
            raise ParameterError("at least one transform must be enabled")
        if self.jitter_ptp_fraction <= 0:
            raise ParameterError("jitter_ptp_fraction must be positive")
        if not 0 < self.scale_low <= self.scale_high:
            raise ParameterError(
                f"need 0 < scale_low <= scale_high, got [{self.scale_low}, {self.scale_high}]"
            )
        if self.shift_units < 1:
            raise ParameterError("shift_units must be >= 1")
        if self.permute_segments < 2:
            raise ParameterError("permute_segments must be >= 2")
        if self.flip_mode not in FLIP_MODES:
            raise ParameterError(f"unknown flip mode {self.flip_mode!r}")

    def factor_for(self, c: int) -> float:
        return float(self.oversample_factors.get(c, 1.0))

    def to_dict(self) -> dict:
        return {
            "oversample_factors": {str(k): v for k, v in self.oversample_factors.items()},
            "transforms": list(self.transforms),
            "jitter_ptp_fraction": self.jitter_ptp_fraction,
            "scale_low": self.scale_low,
            "scale_high": self.scale_high,
            "shift_units": self.shift_units,
            "permute_segments": self.permute_segments,
            "flip_mode": self.flip_mode,
            "seed": self.seed,
        }


def _augmented(s: FeatureSequence, frames: np.ndarray) -> FeatureSequence:
    return FeatureSequence(s.sample_id, frames, s.label, origin=ORIGIN_AUGMENTED)


def jitter(s: FeatureSequence, fraction: float, rng: np.random.Generator) -> FeatureSequence:
    """Gaussian noise per channel with σ = fraction · peak-to-peak of the channel."""
    if fraction <= 0:
        raise ParameterError(f"jitter fraction must be positive, got {fraction}")
    sigma = fraction * (s.frames.max(axis=0) - s.frames.min(axis=0))
    noise = rng.normal(0.0, 1.0, size=s.frames.shape) * sigma
    return _augmented(s, s.frames + noise)


def magnitude_scale(
    s: FeatureSequence, low: float, high: float, rng: np.random.Generator
) -> FeatureSequence:
    """One multiplicative factor k ~ Uniform(low, high) applied to all channels."""
    if not 0 < low <= high:
        raise ParameterError(f"need 0 < low <= high, got [{low}, {high}]")
    k = rng.uniform(low, high)
    return _augmented(s, s.frames * k)


def time_shift(s: FeatureSequence, max_units: int, rng: np.random.Generator) -> FeatureSequence:
    """Shift by u ~ Uniform{−max..max}\\{0} frames with edge replication."""
    t = s.n_frames
    if not 0 < max_units < t:
        raise ParameterError(f"max_units must be in (0, T={t}), got {max_units}")
    j = int(rng.integers(0, 2 * max_units))
    u = j - max_units if j < max_units else j - max_units + 1
    src = np.clip(np.arange(t) - u, 0, t - 1)
    return _augmented(s, s.frames[src])


def permute_segments(
    s: FeatureSequence, n_segments: int, rng: np.random.Generator
) -> FeatureSequence:
    """Cut the time axis into contiguous near-equal segments and shuffle them."""
    t = s.n_frames
    if not 2 <= n_segments <= t:
        raise ParameterError(f"n_segments must be in [2, T={t}], got {n_segments}")
    pieces = np.array_split(np.arange(t), n_segments)
    order = rng.permutation(n_segments)
    idx = np.concatenate([pieces[i] for i in order])
    return _augmented(s, s.frames[idx])


def flip(s: FeatureSequence, mode: str = "time_reverse", rng=None) -> FeatureSequence:
    """Reverse the time axis, or mirror values about each channel mean."""
    if mode == "time_reverse":
        return _augmented(s, s.frames[::-1])
    if mode == "value_mirror":
        mu = s.frames.mean(axis=0)
        return _augmented(s, 2.0 * mu - s.frames)
    raise ParameterError(f"unknown flip mode {mode!r}")


def _apply_one(s: FeatureSequence, name: str, p: AugmentPolicy, rng) -> FeatureSequence:
    if name == "jitter":
        return jitter(s, p.jitter_ptp_fraction, rng)
    if name == "scale":
        return magnitude_scale(s, p.scale_low, p.scale_high, rng)
    if name == "shift":
        return time_shift(s, min(p.shift_units, s.n_frames - 1), rng)
    if name == "permute":
        return permute_segments(s, min(p.permute_segments, s.n_frames), rng)
    if name == "flip":
        return flip(s, p.flip_mode, rng)
    raise ParameterError(f"unknown transform {name!r}")


def apply_policy(d: Dataset, p: AugmentPolicy) -> Dataset:
    """Append ⌈(f_c − 1)·n_c⌉ augmented copies per class c.

    Each copy is one uniformly chosen enabled transform applied to a
    uniformly chosen original of the class.  Originals are kept untouched;
    the result is deterministic for a fixed policy seed.  Refuses to touch a
    test split.
    """
    if d.split == "test":
        raise LeakageError("refusing to augment a test split (information leakage)")
    rng = np.random.default_rng(np.random.SeedSequence((p.seed, 0xA46)))
    originals_by_class: dict[int, list[FeatureSequence]] = {}
    for s in d:
        if s.origin == ORIGIN_ORIGINAL:
            originals_by_class.setdefault(s.label, []).append(s)

    appended: list[FeatureSequence] = []
    for c in sorted(originals_by_class):
        members = originals_by_class[c]
        factor = p.factor_for(c)
        n_new = math.ceil((factor - 1.0) * len(members))
        for i in range(n_new):
            src = members[int(rng.integers(0, len(members)))]
            name = p.transforms[int(rng.integers(0, len(p.transforms)))]
            aug = _apply_one(src, name, p, rng)
            appended.append(
                FeatureSequence(
                    f"{src.sample_id}#aug{c}-{i}",
                    aug.frames,
                    aug.label,
                    origin=ORIGIN_AUGMENTED,
                )
            )
    return Dataset(
        list(d) + appended,
        split=d.split,
        num_classes=d.num_classes,
        split_tags=d.split_tags,
    )
