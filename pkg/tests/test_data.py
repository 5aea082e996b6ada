import numpy as np
import pytest

from actlab.data import (AugmentPolicy, DomainSpec, LabeledSet, ShiftSpec,
                         StrongTier, WeakTier, augment, batches,
                         load_labeled_set, make_domain_pair, rng_stream,
                         rotation_matrix_2d, sample_support, save_labeled_set)
from actlab.errors import ContractViolation, ParseError


def blob_spec(**kw):
    base = dict(generator="gaussian_blobs", dim=2, num_classes=3,
                samples_per_class=(50, 50, 50), seed=9)
    base.update(kw)
    return DomainSpec(**base)


def moons_spec(**kw):
    base = dict(generator="two_moons", dim=2, num_classes=2,
                samples_per_class=(80, 80), seed=9)
    base.update(kw)
    return DomainSpec(**base)


class TestGenerators:
    def test_counts_match_exactly(self):
        src, tgt = make_domain_pair(blob_spec(samples_per_class=(40, 10, 25)))
        np.testing.assert_array_equal(src.class_counts(), [40, 10, 25])
        np.testing.assert_array_equal(tgt.class_counts(), [40, 10, 25])

    def test_deterministic_per_seed(self):
        a = make_domain_pair(blob_spec())
        b = make_domain_pair(blob_spec())
        np.testing.assert_array_equal(a[0].xs, b[0].xs)
        np.testing.assert_array_equal(a[1].xs, b[1].xs)

    def test_seed_changes_draw(self):
        a = make_domain_pair(blob_spec(seed=1))
        b = make_domain_pair(blob_spec(seed=2))
        assert not np.array_equal(a[0].xs, b[0].xs)

    def test_source_and_target_are_independent_draws(self):
        src, tgt = make_domain_pair(blob_spec())
        assert not np.array_equal(src.xs, tgt.xs)

    def test_zero_shift_matches_distribution(self):
        """No shift: both domains share the generating parameters."""
        src, tgt = make_domain_pair(blob_spec(samples_per_class=(4000, 4000, 4000)))
        for c in range(3):
            mu_s = src.xs[src.ys == c].mean(axis=0)
            mu_t = tgt.xs[tgt.ys == c].mean(axis=0)
            np.testing.assert_allclose(mu_s, mu_t, atol=0.1)

    def test_rotation_rotates_the_mean(self):
        """Rotated target mean equals the rotation applied to the unshifted draw."""
        plain = make_domain_pair(moons_spec())[1]
        rotated = make_domain_pair(moons_spec(shift=ShiftSpec(rotation_deg=30.0)))[1]
        expect = plain.xs.mean(axis=0) @ rotation_matrix_2d(30.0).T
        np.testing.assert_allclose(rotated.xs.mean(axis=0), expect, atol=1e-9)

    def test_translation_shifts_the_mean_exactly(self):
        plain = make_domain_pair(blob_spec())[1]
        moved = make_domain_pair(blob_spec(shift=ShiftSpec(translation=(1.5, -2.0))))[1]
        np.testing.assert_allclose(moved.xs, plain.xs + np.array([1.5, -2.0]), atol=1e-12)

    def test_noise_adds_spread(self):
        plain = make_domain_pair(blob_spec())[1]
        noisy = make_domain_pair(blob_spec(shift=ShiftSpec(noise_sigma=0.5)))[1]
        resid = noisy.xs - plain.xs
        assert 0.4 < resid.std() < 0.6

    def test_moons_interleave(self):
        src, _ = make_domain_pair(moons_spec(samples_per_class=(500, 500)))
        c0, c1 = src.xs[src.ys == 0], src.xs[src.ys == 1]
        assert c0[:, 1].max() > 0.9 and c1[:, 1].min() < -0.4
        assert abs(c0[:, 0].mean()) < 0.1 and abs(c1[:, 0].mean() - 1.0) < 0.1

    def test_partial_set_restricts_target_only(self):
        spec = blob_spec(label_space_mode="partial_set", target_classes=(0, 2))
        src, tgt = make_domain_pair(spec)
        assert set(np.unique(src.ys)) == {0, 1, 2}
        assert set(np.unique(tgt.ys)) == {0, 2}
        assert tgt.num_classes == 3

    def test_validation(self):
        with pytest.raises(ContractViolation):
            blob_spec(generator="spiral")
        with pytest.raises(ContractViolation):
            moons_spec(num_classes=3, samples_per_class=(10, 10, 10))
        with pytest.raises(ContractViolation):
            blob_spec(samples_per_class=(10, 10))
        with pytest.raises(ContractViolation):
            blob_spec(shift=ShiftSpec(translation=(1.0, 2.0, 3.0)))
        with pytest.raises(ContractViolation):
            blob_spec(shift=ShiftSpec(noise_sigma=-0.1))
        with pytest.raises(ContractViolation):
            blob_spec(label_space_mode="partial_set", target_classes=(0, 1, 2))
        with pytest.raises(ContractViolation):
            blob_spec(label_space_mode="open_set")


class TestSupportSplit:
    def test_split_invariants(self):
        _, tgt = make_domain_pair(blob_spec(samples_per_class=(30, 20, 25)))
        split = sample_support(tgt, n_way=3, k_shot=5, seed=13)
        assert len(split.support) == 15
        assert len(split.test) == len(tgt) - 15
        np.testing.assert_array_equal(split.support.class_counts(), [5, 5, 5])
        # disjoint and exhaustive: every target row lands in exactly one side
        rows = {tuple(r) for r in tgt.xs}
        srows = {tuple(r) for r in split.support.xs}
        trows = {tuple(r) for r in split.test.xs}
        assert srows | trows == rows and not (srows & trows)

    def test_deterministic(self):
        _, tgt = make_domain_pair(blob_spec())
        a = sample_support(tgt, 3, 5, seed=13)
        b = sample_support(tgt, 3, 5, seed=13)
        np.testing.assert_array_equal(a.support.xs, b.support.xs)

    def test_seed_matters(self):
        _, tgt = make_domain_pair(blob_spec())
        a = sample_support(tgt, 3, 5, seed=13)
        b = sample_support(tgt, 3, 5, seed=14)
        assert not np.array_equal(a.support.xs, b.support.xs)

    def test_k_too_large_names_class(self):
        _, tgt = make_domain_pair(blob_spec(samples_per_class=(30, 4, 30)))
        with pytest.raises(ContractViolation, match="class 1"):
            sample_support(tgt, 3, 5, seed=13)

    def test_n_way_must_cover_present_classes(self):
        _, tgt = make_domain_pair(blob_spec())
        with pytest.raises(ContractViolation):
            sample_support(tgt, 2, 5, seed=13)


class TestAugment:
    def test_deterministic_given_stream(self):
        policy = AugmentPolicy()
        x = np.array([1.0, -2.0, 0.5])
        a = augment(x, policy, "strong", rng_stream(3, "augment"))
        b = augment(x, policy, "strong", rng_stream(3, "augment"))
        np.testing.assert_array_equal(a, b)

    def test_identity_policy_is_exact(self):
        policy = AugmentPolicy(
            weak=WeakTier(jitter_sigma=0.0, flip_axis_prob=0.0),
            strong=StrongTier(jitter_sigma=0.0, scale_range=(1.0, 1.0),
                              feature_drop_prob=0.0, num_ops=3))
        x = np.array([0.3, -1.7])
        rng = rng_stream(5, "augment")
        np.testing.assert_array_equal(augment(x, policy, "weak", rng), x)
        np.testing.assert_array_equal(augment(x, policy, "strong", rng), x)

    def test_weak_flip_negates_one_axis(self):
        policy = AugmentPolicy(weak=WeakTier(jitter_sigma=0.0, flip_axis_prob=1.0))
        x = np.array([1.0, 2.0, 3.0])
        out = augment(x, policy, "weak", rng_stream(7, "augment"))
        flipped = out != x
        assert flipped.sum() == 1
        assert out[flipped][0] == -x[flipped][0]

    def test_weak_jitter_scale(self):
        policy = AugmentPolicy(weak=WeakTier(jitter_sigma=0.2, flip_axis_prob=0.0),
                               strong=StrongTier(jitter_sigma=0.4))
        rng = rng_stream(11, "augment")
        x = np.zeros(2)
        draws = np.array([augment(x, policy, "weak", rng) for _ in range(4000)])
        np.testing.assert_allclose(draws.std(), 0.2, atol=0.01)

    def test_strong_jitter_must_dominate(self):
        with pytest.raises(ContractViolation):
            AugmentPolicy(weak=WeakTier(jitter_sigma=0.2),
                          strong=StrongTier(jitter_sigma=0.1))

    def test_unknown_tier(self):
        with pytest.raises(ContractViolation):
            augment(np.zeros(2), AugmentPolicy(), "medium", rng_stream(0, "augment"))


class TestBatches:
    def test_partition_retains_short_tail(self):
        ls = LabeledSet(np.zeros((10, 2)), np.zeros(10, dtype=int), 2, "x")
        bs = batches(ls, 4, shuffle_seed=1, epoch=0)
        assert [len(b) for b in bs] == [4, 4, 2]
        np.testing.assert_array_equal(np.sort(np.concatenate(bs)), np.arange(10))

    def test_epoch_reshuffles(self):
        ls = LabeledSet(np.zeros((32, 2)), np.zeros(32, dtype=int), 2, "x")
        e0 = np.concatenate(batches(ls, 8, 1, epoch=0))
        e1 = np.concatenate(batches(ls, 8, 1, epoch=1))
        assert not np.array_equal(e0, e1)
        np.testing.assert_array_equal(np.sort(e0), np.sort(e1))

    def test_same_epoch_identical(self):
        ls = LabeledSet(np.zeros((32, 2)), np.zeros(32, dtype=int), 2, "x")
        np.testing.assert_array_equal(np.concatenate(batches(ls, 8, 1, 3)),
                                      np.concatenate(batches(ls, 8, 1, 3)))

    def test_oversized_batch_is_one_batch(self):
        ls = LabeledSet(np.zeros((5, 2)), np.zeros(5, dtype=int), 2, "x")
        bs = batches(ls, 100, 1, 0)
        assert len(bs) == 1 and len(bs[0]) == 5


class TestExport:
    def test_round_trip_exact(self, tmp_path):
        _, tgt = make_domain_pair(blob_spec(shift=ShiftSpec(noise_sigma=0.3)))
        path = tmp_path / "target.csv"
        save_labeled_set(tgt, path)
        back = load_labeled_set(path)
        np.testing.assert_array_equal(back.xs, tgt.xs)
        np.testing.assert_array_equal(back.ys, tgt.ys)
        assert back.num_classes == tgt.num_classes and back.name == tgt.name

    def test_header_format(self, tmp_path):
        ls = LabeledSet([[1.0, 2.0]], [0], 2, "demo")
        path = tmp_path / "d.csv"
        save_labeled_set(ls, path)
        assert path.read_text().splitlines()[0] == "2,2,demo"

    def test_malformed_rows_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("2,2,demo\n1.0,2.0\n")
        with pytest.raises(ParseError):
            load_labeled_set(path)

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("2,2,demo\n1.0,2.0,7\n")
        with pytest.raises(ParseError):
            load_labeled_set(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            load_labeled_set(path)


class TestRngStreams:
    def test_purposes_are_independent(self):
        a = rng_stream(5, "source").normal(size=4)
        b = rng_stream(5, "target").normal(size=4)
        assert not np.array_equal(a, b)

    def test_reproducible(self):
        np.testing.assert_array_equal(rng_stream(5, "split").normal(size=4),
                                      rng_stream(5, "split").normal(size=4))

    def test_indexed_streams_differ(self):
        a = rng_stream(5, "batch", index=0).normal(size=4)
        b = rng_stream(5, "batch", index=1).normal(size=4)
        assert not np.array_equal(a, b)

    def test_unknown_purpose(self):
        with pytest.raises(ContractViolation):
            rng_stream(5, "coffee")
