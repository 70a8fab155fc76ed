import os

import numpy as np
import pytest
from scipy.stats import chisquare

from creative_bandit.data import (
    MUSHROOM_ATTRIBUTES,
    GeneratorConfig,
    ImpressionRecord,
    build_groups,
    generate,
    generate_mushroom,
    load_dataset,
    load_features,
    load_impressions,
    load_mushroom,
    load_truth,
    split,
    write_features,
    write_impressions,
)
from creative_bandit.exceptions import (
    InvalidClick,
    MissingFeature,
    ParseError,
    WrongColumnCount,
)


class TestGeneratorConfig:
    def test_rejects_single_creative_minimum(self):
        with pytest.raises(ValueError):
            GeneratorConfig(creatives_min=1, creatives_mean=2, creatives_max=4)

    def test_rejects_days_outside_window(self):
        with pytest.raises(ValueError):
            GeneratorConfig(days_min=2, days_max=7)
        with pytest.raises(ValueError):
            GeneratorConfig(days_min=5, days_max=20)

    def test_rejects_ratio_at_or_below_one(self):
        with pytest.raises(ValueError):
            GeneratorConfig(best_worst_ratio=1.0)

    def test_weight_vector_matches_dimension(self):
        with pytest.raises(ValueError):
            GeneratorConfig(feature_dim=3, weights=(1.0, 2.0)).weight_vector()


class TestGenerate:
    def test_argmax_truth_follows_features_without_offsets(self):
        config = GeneratorConfig(products=50, offset_noise=0.0, ctr_scale=0.08, seed=7)
        ds = generate(config)
        w = config.weight_vector()
        per_product: dict = {}
        for cid, ctr in ds.true_ctr.items():
            pid = cid.rsplit("_c", 1)[0]
            per_product.setdefault(pid, []).append((cid, ctr))
        for pid, entries in per_product.items():
            entries.sort()
            scores = [ds.features[cid] @ w for cid, _ in entries]
            truths = [ctr for _, ctr in entries]
            assert int(np.argmax(scores)) == int(np.argmax(truths))

    def test_empirical_ctr_concentrates_on_truth(self):
        # one heavy product: every creative collects >= 1e5 impressions
        config = GeneratorConfig(
            products=1, creatives_min=3, creatives_mean=3, creatives_max=3,
            impressions_per_day=120_000, days_min=5, days_max=5, seed=8,
        )
        ds = generate(config)
        counts: dict = {}
        clicks: dict = {}
        for rec in ds.impressions:
            counts[rec.creative_id] = counts.get(rec.creative_id, 0) + 1
            clicks[rec.creative_id] = clicks.get(rec.creative_id, 0) + rec.click
        for cid, n in counts.items():
            assert n >= 100_000
            p = ds.true_ctr[cid]
            se = np.sqrt(p * (1 - p) / n)
            assert abs(clicks[cid] / n - p) < 3 * se

    def test_uniform_display_shares(self):
        config = GeneratorConfig(
            products=1, creatives_min=4, creatives_mean=4, creatives_max=4,
            impressions_per_day=20_000, days_min=5, days_max=5, seed=9,
        )
        ds = generate(config)
        counts: dict = {}
        for rec in ds.impressions:
            counts[rec.creative_id] = counts.get(rec.creative_id, 0) + 1
        total = sum(counts.values())
        se = np.sqrt(0.25 * 0.75 / total)
        for n in counts.values():
            assert abs(n / total - 0.25) < 4 * se

    def test_uniform_logging_chi_squared(self):
        config = GeneratorConfig(products=200, impressions_per_day=40, seed=10)
        ds = generate(config)
        rosters: dict = {}
        counts: dict = {}
        for rec in ds.impressions:
            rosters.setdefault(rec.product_id, set()).add(rec.creative_id)
            counts[(rec.product_id, rec.creative_id)] = (
                counts.get((rec.product_id, rec.creative_id), 0) + 1
            )
        checked = 0
        for pid, roster in rosters.items():
            observed = [counts.get((pid, cid), 0) for cid in sorted(roster)]
            if sum(observed) < 100:
                continue
            checked += 1
            assert chisquare(observed).pvalue > 0.001
        assert checked > 150

    def test_planted_best_worst_ratio(self):
        config = GeneratorConfig(
            products=1, creatives_min=4, creatives_mean=4, creatives_max=4,
            impressions_per_day=30_000, days_min=5, days_max=5,
            best_worst_ratio=3.0, ctr_scale=0.1, seed=11,
        )
        ds = generate(config)
        truths = np.array(sorted(ds.true_ctr.values()))
        assert truths[-1] / truths[0] == pytest.approx(3.0, rel=1e-9)
        counts: dict = {}
        clicks: dict = {}
        for rec in ds.impressions:
            counts[rec.creative_id] = counts.get(rec.creative_id, 0) + 1
            clicks[rec.creative_id] = clicks.get(rec.creative_id, 0) + rec.click
        rates = {cid: clicks[cid] / counts[cid] for cid in counts}
        measured = max(rates.values()) / min(rates.values())
        assert abs(measured - 3.0) / 3.0 < 0.1

    def test_lifetimes_within_window(self):
        ds = generate(GeneratorConfig(products=40, seed=12))
        days: dict = {}
        for rec in ds.impressions:
            days.setdefault(rec.product_id, set()).add(rec.day)
        for pid, seen in days.items():
            assert 5 <= max(seen) + 1 <= 14

    def test_regeneration_is_identical(self):
        config = GeneratorConfig(products=10, seed=13)
        a = generate(config)
        b = generate(config)
        assert a.impressions == b.impressions
        assert set(a.features) == set(b.features)
        for cid in a.features:
            np.testing.assert_array_equal(a.features[cid], b.features[cid])


class TestSplit:
    def test_all_train(self):
        ids = [f"p{i}" for i in range(20)]
        train, val, test = split(ids, (1.0, 0.0, 0.0), seed=0)
        assert train == set(ids) and not val and not test

    def test_largest_remainder_exact_small_case(self):
        ids = [f"p{i}" for i in range(10)]
        train, val, test = split(ids, (0.6, 0.2, 0.2), seed=1)
        assert (len(train), len(val), len(test)) == (6, 2, 2)

    def test_deterministic(self):
        ids = [f"p{i}" for i in range(57)]
        assert split(ids, (0.5, 0.25, 0.25), seed=5) == split(ids, (0.5, 0.25, 0.25), seed=5)

    def test_partition(self):
        ids = [f"p{i}" for i in range(101)]
        train, val, test = split(ids, (0.7, 0.2, 0.1), seed=3)
        assert train | val | test == set(ids)
        assert not (train & val) and not (train & test) and not (val & test)

    def test_invalid_fractions(self):
        with pytest.raises(ValueError):
            split(["a"], (0.5, 0.2, 0.2), seed=0)
        with pytest.raises(ValueError):
            split(["a"], (0.5, 0.5), seed=0)


class TestImpressionIO:
    def test_roundtrip(self, tmp_path):
        ds = generate(GeneratorConfig(products=8, seed=14))
        ds.write(tmp_path)
        loaded = load_dataset(tmp_path)
        assert loaded.impressions == ds.impressions
        assert set(loaded.features) == set(ds.features)
        for cid in ds.features:
            np.testing.assert_allclose(loaded.features[cid], ds.features[cid])
        for cid, ctr in ds.true_ctr.items():
            assert loaded.true_ctr[cid] == pytest.approx(ctr, abs=0)
        assert loaded.logging_policy == "uniform"

    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text("", encoding="utf-8")
        assert load_impressions(path) == []

    def test_header_only_is_empty(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text("product_id,creative_id,day,click\n", encoding="utf-8")
        assert load_impressions(path) == []

    def test_invalid_click_label(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text(
            "product_id,creative_id,day,click\np,a,0,1\np,a,0,2\n", encoding="utf-8"
        )
        with pytest.raises(InvalidClick) as err:
            load_impressions(path)
        assert err.value.line == 3

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text("product_id,creative_id,day,click\np,a,0\n", encoding="utf-8")
        with pytest.raises(WrongColumnCount) as err:
            load_impressions(path)
        assert err.value.line == 2

    def test_missing_column(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text("pid,creative_id,day,click\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_impressions(path)

    def test_header_map(self, tmp_path):
        path = tmp_path / "impressions.csv"
        path.write_text("pid,cid,d,y\nP1,C1,3,1\n", encoding="utf-8")
        records = load_impressions(
            path,
            columns={"product_id": "pid", "creative_id": "cid", "day": "d", "click": "y"},
        )
        assert records == [ImpressionRecord("P1", "C1", 3, 1)]

    def test_log_referencing_unknown_creative(self, tmp_path):
        write_impressions(tmp_path / "impressions.csv", [("p", "mystery", 0, 0)])
        write_features(tmp_path / "features.jsonl", {"other": np.zeros(2)})
        with pytest.raises(MissingFeature, match="mystery"):
            load_dataset(tmp_path)

    def test_feature_dimension_mismatch(self, tmp_path):
        path = tmp_path / "features.jsonl"
        path.write_text(
            '{"creative_id": "a", "vector": [1.0, 2.0]}\n'
            '{"creative_id": "b", "vector": [1.0]}\n',
            encoding="utf-8",
        )
        with pytest.raises(ParseError) as err:
            load_features(path)
        assert err.value.line == 2

    def test_duplicate_feature_rejected(self, tmp_path):
        path = tmp_path / "features.jsonl"
        path.write_text(
            '{"creative_id": "a", "vector": [1.0]}\n'
            '{"creative_id": "a", "vector": [2.0]}\n',
            encoding="utf-8",
        )
        with pytest.raises(ParseError):
            load_features(path)

    def test_truth_loader_handles_missing_file_contents(self, tmp_path):
        path = tmp_path / "ground_truth.csv"
        path.write_text("", encoding="utf-8")
        assert load_truth(path) == {}


class TestBuildGroups:
    def test_aggregates_counts(self):
        rows = [
            ("p", "a", 0, 1),
            ("p", "a", 0, 0),
            ("p", "b", 1, 0),
        ]
        features = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
        groups = build_groups(rows, features)
        assert len(groups) == 1
        g = groups[0]
        assert g.creative_ids == ("a", "b")
        np.testing.assert_array_equal(g.impressions, [2, 1])
        np.testing.assert_array_equal(g.clicks, [1, 0])

    def test_single_creative_products_dropped(self):
        rows = [("p1", "a", 0, 0), ("p2", "x", 0, 0), ("p2", "y", 0, 1)]
        features = {k: np.zeros(1) for k in "axy"}
        groups = build_groups(rows, features)
        assert [g.product_id for g in groups] == ["p2"]

    def test_missing_feature_raises(self):
        rows = [("p", "a", 0, 0), ("p", "b", 0, 0)]
        with pytest.raises(MissingFeature):
            build_groups(rows, {"a": np.zeros(1)})


class TestMushroom:
    def test_generate_and_load(self, tmp_path):
        path = tmp_path / "mushroom.data"
        generate_mushroom(path, n=1500, seed=1)
        data = load_mushroom(path)
        assert data.n == 1500
        assert data.raw.shape == (1500, 22)
        assert 0.4 < data.safe_fraction < 0.62
        # bias column is all ones and last
        assert data.columns[-1] == "bias"
        np.testing.assert_array_equal(data.encoded[:, -1], np.ones(1500))

    def test_class_codes_map_to_safety(self, tmp_path):
        path = tmp_path / "m.data"
        n_attrs = len(MUSHROOM_ATTRIBUTES)
        path.write_text(
            "e," + ",".join(["x"] * n_attrs) + "\n" + "p," + ",".join(["x"] * n_attrs) + "\n",
            encoding="utf-8",
        )
        data = load_mushroom(path)
        np.testing.assert_array_equal(data.safe, [True, False])

    def test_bruises_partitions_into_two_groups(self, tmp_path):
        path = tmp_path / "mushroom.data"
        generate_mushroom(path, n=2000, seed=2)
        data = load_mushroom(path)
        values = set(data.attribute_values("bruises"))
        assert values == {"t", "f"}

    def test_question_mark_is_its_own_category(self, tmp_path):
        path = tmp_path / "mushroom.data"
        generate_mushroom(path, n=3000, seed=3)
        data = load_mushroom(path)
        assert "stalk-root=?" in data.columns

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "m.data"
        path.write_text("e,x,y\n", encoding="utf-8")
        with pytest.raises(WrongColumnCount):
            load_mushroom(path)

    def test_bad_class_code(self, tmp_path):
        path = tmp_path / "m.data"
        path.write_text("q," + ",".join(["x"] * 22) + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_mushroom(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "m.data"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ParseError):
            load_mushroom(path)

    def test_unknown_attribute_lookup(self, tmp_path):
        path = tmp_path / "mushroom.data"
        generate_mushroom(path, n=100, seed=4)
        data = load_mushroom(path)
        with pytest.raises(KeyError):
            data.attribute_values("aura")

    @pytest.mark.skipif(
        "CREATIVE_BANDIT_MUSHROOM" not in os.environ,
        reason="canonical UCI file not provided",
    )
    def test_canonical_file_shape(self):
        data = load_mushroom(os.environ["CREATIVE_BANDIT_MUSHROOM"])
        assert data.n == 8124
        assert data.encoded.shape[1] == 117 + 1  # one-hot columns plus bias
