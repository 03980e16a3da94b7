"""Synthetic dataset generation and bias injection."""

import warnings

import numpy as np
import pytest

from cmwnet import biasgen
from cmwnet.biasgen import (BiasSpec, Dataset, apply_longtail, export_csv,
                            imbalance_factor, inject_asymmetric, inject_hybrid,
                            inject_pmd, inject_symmetric, load_dataset,
                            make_gaussian_classes, nearest_class_mapping,
                            posterior, save_dataset)


class TestGaussianClasses:
    def test_counts_exact(self):
        ds = make_gaussian_classes(4, 3, 50, 6.0, 1.0, 0)
        np.testing.assert_array_equal(ds.class_counts(), [50] * 4)
        np.testing.assert_array_equal(ds.observed_labels, ds.clean_labels)

    def test_zero_separation_chance_bayes(self):
        ds = make_gaussian_classes(2, 2, 10, 0.0, 1.0, 0)
        eta = posterior(np.random.default_rng(0).normal(size=(100, 2)),
                        ds.mixture)
        np.testing.assert_allclose(eta, np.full((100, 2), 0.5), atol=1e-9)

    def test_wide_separation_high_bayes_accuracy(self):
        ds = make_gaussian_classes(4, 2, 10, 6.0, 1.0, 0)
        rng = np.random.default_rng(1)
        # fresh Monte-Carlo draw per class, scored by the posterior argmax
        hits = 0
        total = 10000
        per = total // 4
        for c in range(4):
            x = rng.normal(size=(per, 2)) + ds.mixture.means[c]
            eta = posterior(x, ds.mixture)
            hits += int((np.argmax(eta, axis=1) == c).sum())
        assert hits / total > 0.99

    def test_pairwise_mean_distances(self):
        # with d >= C-1 every pair of class means is exactly `separation` apart
        ds = make_gaussian_classes(5, 8, 5, 3.0, 1.0, 0)
        m = ds.mixture.means
        for i in range(5):
            for j in range(i + 1, 5):
                assert abs(np.linalg.norm(m[i] - m[j]) - 3.0) < 1e-9

    def test_deterministic(self):
        a = make_gaussian_classes(3, 4, 20, 5.0, 1.0, 9)
        b = make_gaussian_classes(3, 4, 20, 5.0, 1.0, 9)
        np.testing.assert_array_equal(a.features, b.features)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            make_gaussian_classes(1, 2, 10, 1.0, 1.0, 0)


class TestPosterior:
    def test_midpoint_symmetry(self):
        ds = make_gaussian_classes(2, 2, 5, 4.0, 1.0, 0)
        mid = ds.mixture.means.mean(axis=0)
        eta = posterior(mid[None, :], ds.mixture)
        np.testing.assert_allclose(eta[0], [0.5, 0.5], atol=1e-12)

    def test_class_mean_dominant(self):
        ds = make_gaussian_classes(3, 2, 5, 8.0, 1.0, 0)
        eta = posterior(ds.mixture.means[1][None, :], ds.mixture)
        assert eta[0, 1] > 0.99

    def test_rows_sum_to_one(self, rng):
        ds = make_gaussian_classes(4, 3, 5, 5.0, 1.0, 0)
        eta = posterior(rng.normal(size=(50, 3)) * 5, ds.mixture)
        np.testing.assert_allclose(eta.sum(axis=1), np.ones(50), atol=1e-12)


class TestLongtail:
    def test_factor_one_unchanged(self):
        ds = make_gaussian_classes(4, 2, 30, 5.0, 1.0, 0)
        out = apply_longtail(ds, 1.0, 3)
        np.testing.assert_array_equal(out.class_counts(), ds.class_counts())

    def test_geometric_decay(self):
        ds = make_gaussian_classes(10, 2, 500, 5.0, 1.0, 0)
        out = apply_longtail(ds, 10.0, 3)
        counts = out.class_counts()
        mu = 10.0 ** (-1.0 / 9.0)
        expected = [int(np.ceil(500 * mu ** i - 1e-9)) for i in range(10)]
        np.testing.assert_array_equal(counts, expected)
        assert counts[0] == 500 and counts[-1] == 50

    def test_measured_factor_near_requested(self):
        ds = make_gaussian_classes(10, 2, 500, 5.0, 1.0, 0)
        out = apply_longtail(ds, 100.0, 3)
        assert abs(imbalance_factor(out) - 100.0) / 100.0 < 0.05

    def test_factor_below_one_rejected(self):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        with pytest.raises(ValueError):
            apply_longtail(ds, 0.5, 0)

    def test_preserves_feature_label_pairing(self):
        ds = make_gaussian_classes(4, 2, 40, 5.0, 1.0, 0)
        out = apply_longtail(ds, 8.0, 3)
        # every kept row exists in the source with the same labels
        src = {tuple(f): (o, c) for f, o, c in
               zip(ds.features, ds.observed_labels, ds.clean_labels)}
        for f, o, c in zip(out.features, out.observed_labels, out.clean_labels):
            assert src[tuple(f)] == (o, c)


class TestImbalanceFactor:
    def test_balanced(self):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        assert imbalance_factor(ds) == 1.0

    def test_empty_class_rejected(self):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        ds = Dataset(ds.features, np.zeros(30, dtype=np.int64),
                     ds.clean_labels, 3, ds.mixture)
        with pytest.raises(ValueError):
            imbalance_factor(ds)


class TestSymmetricNoise:
    def test_rate_zero_unchanged(self):
        ds = make_gaussian_classes(4, 2, 25, 5.0, 1.0, 0)
        out = inject_symmetric(ds, 0.0, 1)
        np.testing.assert_array_equal(out.observed_labels, ds.observed_labels)

    def test_effective_rate_with_replacement(self):
        ds = make_gaussian_classes(10, 2, 1000, 5.0, 1.0, 0)
        out = inject_symmetric(ds, 0.4, 1)
        frac = float(np.mean(out.observed_labels != out.clean_labels))
        # resampling keeps the old label 1/C of the time
        expect = 0.4 * 0.9
        sigma = np.sqrt(expect * (1 - expect) / ds.n)
        assert abs(frac - expect) < 3 * sigma

    def test_full_rate_two_classes(self):
        ds = make_gaussian_classes(2, 2, 5000, 5.0, 1.0, 0)
        out = inject_symmetric(ds, 1.0, 1)
        frac = float(np.mean(out.observed_labels != out.clean_labels))
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / ds.n)

    def test_exclude_true_always_flips(self):
        ds = make_gaussian_classes(5, 2, 200, 5.0, 1.0, 0)
        out = inject_symmetric(ds, 1.0, 1, exclude_true=True)
        assert np.all(out.observed_labels != out.clean_labels)

    def test_clean_labels_and_features_untouched(self):
        ds = make_gaussian_classes(4, 2, 25, 5.0, 1.0, 0)
        out = inject_symmetric(ds, 0.7, 1)
        np.testing.assert_array_equal(out.clean_labels, ds.clean_labels)
        np.testing.assert_array_equal(out.features, ds.features)

    def test_rate_out_of_range(self):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        with pytest.raises(ValueError):
            inject_symmetric(ds, 1.5, 0)


class TestAsymmetricNoise:
    def test_rate_zero_unchanged(self):
        ds = make_gaussian_classes(4, 2, 25, 5.0, 1.0, 0)
        out = inject_asymmetric(ds, 0.0, 1)
        np.testing.assert_array_equal(out.observed_labels, ds.observed_labels)

    def test_flips_follow_mapping_edges(self):
        ds = make_gaussian_classes(6, 5, 300, 5.0, 1.0, 0)
        mapping = nearest_class_mapping(ds.mixture)
        out = inject_asymmetric(ds, 0.4, 1)
        noisy = out.observed_labels != out.clean_labels
        for i in np.where(noisy)[0]:
            assert out.observed_labels[i] == mapping[out.clean_labels[i]]

    def test_per_class_rate(self):
        ds = make_gaussian_classes(5, 4, 1000, 5.0, 1.0, 0)
        out = inject_asymmetric(ds, 0.4, 1)
        for c in range(5):
            sel = out.clean_labels == c
            frac = float(np.mean(out.observed_labels[sel] != c))
            assert abs(frac - 0.4) < 3 * np.sqrt(0.4 * 0.6 / sel.sum())

    def test_self_mapping_rejected(self):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        with pytest.raises(ValueError):
            inject_asymmetric(ds, 0.2, 1, mapping={0: 0, 1: 0, 2: 0})

    def test_mapping_is_nearest_mean(self):
        ds = make_gaussian_classes(4, 2, 10, 5.0, 1.0, 0)
        mapping = nearest_class_mapping(ds.mixture)
        for c, m in mapping.items():
            assert m != c
            d_m = np.linalg.norm(ds.mixture.means[c] - ds.mixture.means[m])
            for other in range(4):
                if other != c:
                    d_o = np.linalg.norm(ds.mixture.means[c] -
                                         ds.mixture.means[other])
                    assert d_m <= d_o + 1e-12


class TestPmdNoise:
    def test_level_zero_unchanged(self):
        ds = make_gaussian_classes(4, 3, 50, 4.0, 1.0, 0)
        out = inject_pmd(ds, 1, 0.0, 1)
        np.testing.assert_array_equal(out.observed_labels, ds.observed_labels)

    def test_raw_probabilities_at_zero_margin(self):
        delta = np.array([0.0])
        assert biasgen._margin_tau(delta, 1)[0] == 0.5
        assert biasgen._margin_tau(delta, 2)[0] == 1.0
        assert biasgen._margin_tau(delta, 3)[0] == 1.0

    def test_raw_probabilities_at_full_margin(self):
        delta = np.array([1.0])
        assert biasgen._margin_tau(delta, 1)[0] == 0.0
        assert biasgen._margin_tau(delta, 2)[0] == 0.0
        assert abs(biasgen._margin_tau(delta, 3)[0]) < 1e-12

    @pytest.mark.parametrize("noise_type", [1, 2, 3])
    def test_achieved_rate(self, noise_type):
        ds = make_gaussian_classes(10, 8, 1000, 4.0, 1.0, 0)
        out = inject_pmd(ds, noise_type, 0.35, 1)
        frac = float(np.mean(out.observed_labels != out.clean_labels))
        assert abs(frac - 0.35) < 0.01

    def test_flips_go_to_runner_up(self):
        ds = make_gaussian_classes(5, 4, 400, 3.0, 1.0, 0)
        out = inject_pmd(ds, 2, 0.3, 1)
        eta = posterior(ds.features, ds.mixture)
        order = np.argsort(eta, axis=1)
        noisy = np.where(out.observed_labels != out.clean_labels)[0]
        assert noisy.size > 0
        for i in noisy:
            assert out.clean_labels[i] == order[i, -1]
            assert out.observed_labels[i] == order[i, -2]

    def test_infeasible_level_warns(self):
        # huge separation makes large flip rates unreachable
        ds = make_gaussian_classes(4, 3, 200, 12.0, 1.0, 0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            inject_pmd(ds, 1, 0.9, 1)
        assert any("infeasible" in str(w.message) for w in caught)

    def test_missing_oracle_rejected(self):
        ds = make_gaussian_classes(3, 2, 10, 4.0, 1.0, 0)
        bare = Dataset(ds.features, ds.observed_labels, ds.clean_labels, 3, None)
        with pytest.raises(ValueError):
            inject_pmd(bare, 1, 0.2, 0)


class TestHybridNoise:
    def test_both_levels_zero_unchanged(self):
        ds = make_gaussian_classes(4, 3, 50, 4.0, 1.0, 0)
        out = inject_hybrid(ds, 1, 0.0, "symmetric", 0.0, 1)
        np.testing.assert_array_equal(out.observed_labels, ds.observed_labels)

    def test_total_rate_bounds(self):
        ds = make_gaussian_classes(10, 8, 1000, 4.0, 1.0, 0)
        out = inject_hybrid(ds, 1, 0.35, "symmetric", 0.3, 1)
        frac = float(np.mean(out.observed_labels != out.clean_labels))
        assert 0.30 < frac < 0.65

    def test_stage_order_matters(self):
        ds = make_gaussian_classes(6, 5, 400, 3.0, 1.0, 0)
        forward = inject_hybrid(ds, 1, 0.35, "symmetric", 0.3, 5)
        # swapped order: symmetric first, then feature-dependent
        r = np.random.default_rng(np.random.SeedSequence(5))
        s1, s2 = (int(v) for v in r.integers(0, 2 ** 62, size=2))
        swapped = inject_pmd(inject_symmetric(ds, 0.3, s2), 1, 0.35, s1)
        assert not np.array_equal(forward.observed_labels,
                                  swapped.observed_labels)

    def test_stage_seeds_differ(self):
        # the two stages must not reuse one RNG stream
        ds = make_gaussian_classes(10, 8, 500, 4.0, 1.0, 0)
        out1 = inject_hybrid(ds, 1, 0.2, "symmetric", 0.2, 3)
        out2 = inject_hybrid(ds, 1, 0.2, "symmetric", 0.2, 4)
        assert not np.array_equal(out1.observed_labels, out2.observed_labels)


class TestBiasSpec:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            BiasSpec(kind="gauss")

    def test_apply_chain_matches_direct_calls(self):
        ds = make_gaussian_classes(10, 8, 200, 4.0, 1.0, 0)
        via_spec = BiasSpec(kind="symmetric", level=0.4, seed=7).apply(ds)
        direct = inject_symmetric(ds, 0.4, 7)
        np.testing.assert_array_equal(via_spec.observed_labels,
                                      direct.observed_labels)

    def test_pmd_kinds_route_by_type(self):
        ds = make_gaussian_classes(6, 5, 300, 3.0, 1.0, 0)
        via_spec = BiasSpec(kind="pmd2", level=0.3, seed=2).apply(ds)
        direct = inject_pmd(ds, 2, 0.3, 2)
        np.testing.assert_array_equal(via_spec.observed_labels,
                                      direct.observed_labels)

    def test_level_validation(self):
        with pytest.raises(ValueError):
            BiasSpec(kind="symmetric", level=2.0)
        with pytest.raises(ValueError):
            BiasSpec(kind="longtail", imbalance_factor=0.2)


class TestDatasetFiles:
    def test_binary_round_trip(self, tmp_path):
        ds = make_gaussian_classes(4, 3, 25, 5.0, 1.0, 0)
        ds = inject_symmetric(ds, 0.3, 1)
        path = tmp_path / "data.cmwd"
        save_dataset(path, ds)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.observed_labels, ds.observed_labels)
        np.testing.assert_array_equal(back.clean_labels, ds.clean_labels)
        assert back.C == ds.C
        np.testing.assert_allclose(back.mixture.means, ds.mixture.means)
        assert back.mixture.sigma == ds.mixture.sigma

    def test_round_trip_without_mixture(self, tmp_path):
        ds = make_gaussian_classes(3, 2, 10, 5.0, 1.0, 0)
        bare = Dataset(ds.features, ds.observed_labels, ds.clean_labels, 3, None)
        path = tmp_path / "bare.cmwd"
        save_dataset(path, bare)
        back = load_dataset(path)
        assert back.mixture is None
        np.testing.assert_array_equal(back.features, bare.features)

    def test_csv_export(self, tmp_path):
        ds = make_gaussian_classes(3, 2, 4, 5.0, 1.0, 0)
        path = tmp_path / "data.csv"
        export_csv(path, ds)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + ds.n
        header = lines[0].split(",")
        assert header[-2:] == ["observed", "clean"]

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.cmwd"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_dataset(path)
