import numpy as np
import pytest

from ordengage.augment import (
    AugmentPolicy,
    apply_policy,
    flip,
    jitter,
    magnitude_scale,
    permute_segments,
    time_shift,
)
from ordengage.data import Dataset, FeatureSequence
from ordengage.errors import LeakageError, ParameterError

from test_data import tiny_dataset


def seq_1d(values, label=0):
    return FeatureSequence("s", np.asarray(values, dtype=float).reshape(-1, 1), label)


class TestJitter:
    def test_sigma_follows_ptp_rule(self):
        # ptp of [0,1,2,1] is 2, so sigma must be 0.2 under the 1/10 rule
        s = seq_1d([0.0, 1.0, 2.0, 1.0])
        rng = np.random.default_rng(0)
        deltas = []
        for _ in range(4000):
            deltas.extend((jitter(s, 0.1, rng).frames - s.frames).ravel())
        assert np.std(deltas) == pytest.approx(0.2, rel=0.05)

    def test_constant_channel_unchanged(self):
        s = seq_1d([5.0, 5.0, 5.0])
        out = jitter(s, 0.1, np.random.default_rng(1))
        np.testing.assert_array_equal(out.frames, s.frames)

    def test_invalid_fraction(self):
        with pytest.raises(ParameterError):
            jitter(seq_1d([1.0, 2.0]), 0.0, np.random.default_rng(0))


class TestMagnitudeScale:
    def test_forced_identity(self):
        s = seq_1d([1.0, -2.0, 3.0])
        out = magnitude_scale(s, 1.0, 1.0, np.random.default_rng(0))
        np.testing.assert_allclose(out.frames, s.frames)

    def test_exact_scale(self):
        s = seq_1d([0.0, 2.0, 4.0])
        out = magnitude_scale(s, 0.75, 0.75, np.random.default_rng(0))
        np.testing.assert_allclose(out.frames.ravel(), [0.0, 1.5, 3.0])
        assert np.ptp(out.frames) == pytest.approx(0.75 * np.ptp(s.frames))

    def test_zero_sequence_fixed_point(self):
        s = seq_1d([0.0, 0.0, 0.0])
        out = magnitude_scale(s, 0.5, 1.5, np.random.default_rng(3))
        assert not out.frames.any()

    def test_bad_bounds(self):
        with pytest.raises(ParameterError):
            magnitude_scale(seq_1d([1.0, 2.0]), 0.0, 1.0, np.random.default_rng(0))


class TestTimeShift:
    def test_shift_plus_one_edge_replicates(self):
        s = seq_1d([1.0, 2.0, 3.0, 4.0])
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(100):
            out = time_shift(s, 1, rng)
            seen.add(tuple(out.frames.ravel()))
        assert seen == {(1.0, 1.0, 2.0, 3.0), (2.0, 3.0, 4.0, 4.0)}

    def test_zero_shift_excluded(self):
        s = seq_1d([1.0, 2.0, 3.0, 4.0])
        rng = np.random.default_rng(1)
        for _ in range(200):
            out = time_shift(s, 2, rng)
            assert not np.array_equal(out.frames, s.frames)

    def test_bounds(self):
        with pytest.raises(ParameterError):
            time_shift(seq_1d([1.0, 2.0]), 2, np.random.default_rng(0))


class TestPermuteSegments:
    def test_two_segments_enumerated(self):
        s = seq_1d([1.0, 2.0, 3.0, 4.0])
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(100):
            out = permute_segments(s, 2, rng)
            seen.add(tuple(out.frames.ravel()))
        assert seen == {(1.0, 2.0, 3.0, 4.0), (3.0, 4.0, 1.0, 2.0)}

    def test_full_shuffle_preserves_multiset(self):
        rng = np.random.default_rng(5)
        frames = rng.normal(size=(9, 3))
        s = FeatureSequence("s", frames, 1)
        out = permute_segments(s, 9, rng)
        np.testing.assert_allclose(
            np.sort(out.frames, axis=0), np.sort(frames, axis=0)
        )

    def test_bounds(self):
        with pytest.raises(ParameterError):
            permute_segments(seq_1d([1.0, 2.0]), 3, np.random.default_rng(0))


class TestFlip:
    def test_time_reverse_involution(self):
        rng = np.random.default_rng(2)
        s = FeatureSequence("s", rng.normal(size=(7, 3)), 2)
        twice = flip(flip(s, "time_reverse"), "time_reverse")
        np.testing.assert_array_equal(twice.frames, s.frames)

    def test_value_mirror_involution_and_mean(self):
        rng = np.random.default_rng(3)
        s = FeatureSequence("s", rng.normal(size=(6, 2)), 0)
        once = flip(s, "value_mirror")
        np.testing.assert_allclose(once.frames.mean(axis=0), s.frames.mean(axis=0))
        twice = flip(once, "value_mirror")
        np.testing.assert_allclose(twice.frames, s.frames, atol=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            flip(seq_1d([1.0, 2.0]), "upside_down")


class TestAllTransformsPreserveContract:
    @pytest.mark.parametrize("name", ["jitter", "scale", "shift", "permute", "flip"])
    def test_shape_label_origin(self, name):
        rng = np.random.default_rng(11)
        s = FeatureSequence("base", rng.normal(size=(12, 5)), 3)
        policy = AugmentPolicy()
        from ordengage.augment import _apply_one

        out = _apply_one(s, name, policy, rng)
        assert out.frames.shape == s.frames.shape
        assert out.label == s.label
        assert out.origin == "augmented"


class TestApplyPolicy:
    def test_daisee_scale_totals(self):
        ds = tiny_dataset([25, 356, 3430, 2944], t=4)
        policy = AugmentPolicy(seed=0)
        out = apply_policy(ds, policy)
        assert out.class_counts.tolist() == [250, 3560, 5145, 4416]

    def test_factor_one_is_noop(self):
        ds = tiny_dataset([4, 6])
        policy = AugmentPolicy(oversample_factors={0: 1.0, 1: 1.0}, seed=0)
        out = apply_policy(ds, policy)
        assert len(out) == len(ds)
        assert out.sample_ids() == ds.sample_ids()

    def test_test_split_refused(self):
        ds = tiny_dataset([4, 4], split="test")
        with pytest.raises(LeakageError):
            apply_policy(ds, AugmentPolicy(seed=0))

    def test_originals_not_mutated(self):
        rng = np.random.default_rng(0)
        frames = [rng.normal(size=(6, 2)) for _ in range(8)]
        ds = Dataset(
            [FeatureSequence(f"s{i}", f, i % 2) for i, f in enumerate(frames)],
            num_classes=2,
        )
        snapshot = [s.frames.copy() for s in ds]
        apply_policy(ds, AugmentPolicy(oversample_factors={0: 3.0, 1: 3.0}, seed=1))
        for s, snap in zip(ds, snapshot):
            np.testing.assert_array_equal(s.frames, snap)

    def test_deterministic(self):
        ds = tiny_dataset([5, 5], t=6)
        policy = AugmentPolicy(oversample_factors={0: 2.0, 1: 3.0}, seed=9)
        a = apply_policy(ds, policy)
        b = apply_policy(ds, policy)
        assert a.sample_ids() == b.sample_ids()
        for s1, s2 in zip(a, b):
            np.testing.assert_array_equal(s1.frames, s2.frames)

    def test_augmented_flagged_and_originals_kept(self):
        ds = tiny_dataset([4, 4], t=6)
        out = apply_policy(ds, AugmentPolicy(oversample_factors={0: 2.0}, seed=2))
        originals = [s for s in out if s.origin == "original"]
        augmented = [s for s in out if s.origin == "augmented"]
        assert len(originals) == 8 and len(augmented) == 4
        assert all(s.label == 0 for s in augmented)


def test_policy_validation():
    with pytest.raises(ParameterError):
        AugmentPolicy(oversample_factors={0: 0.5})
    with pytest.raises(ParameterError):
        AugmentPolicy(transforms=("warp",))
    with pytest.raises(ParameterError):
        AugmentPolicy(scale_low=0.0)
    with pytest.raises(ParameterError):
        AugmentPolicy(flip_mode="diagonal")
