from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from aerocensus.dataset import read_manifest, split, split_sizes, write_manifest
from aerocensus.errors import ConfigError, EmptyInputError


def items_frame(n, n_geoids=None):
    n_geoids = n_geoids or max(1, n // 4)
    return pd.DataFrame(
        {
            "item_id": [f"i{i:07d}" for i in range(n)],
            "geoid": [f"g{i % n_geoids:05d}" for i in range(n)],
            "path": [f"/x/{i}.png" for i in range(n)],
        }
    )


class TestSplitSizes:
    def test_resizing_corpus_counts(self):
        assert split_sizes(43_497, (0.70, 0.15, 0.15)) == (30_447, 6_524, 6_526)

    def test_patching_corpus_counts(self):
        assert split_sizes(339_413, (0.70, 0.15, 0.15)) == (237_589, 50_911, 50_913)

    def test_small_n_floor_rule(self):
        assert split_sizes(10, (0.70, 0.15, 0.15)) == (7, 1, 2)


class TestSplit:
    def test_sizes_and_partition(self):
        out = split(items_frame(100), seed=1)
        counts = out["split"].value_counts()
        assert counts["train"] == 70 and counts["val"] == 15 and counts["test"] == 15

    def test_deterministic(self):
        a = split(items_frame(50), seed=3)
        b = split(items_frame(50), seed=3)
        pd.testing.assert_frame_equal(a, b)
        c = split(items_frame(50), seed=4)
        assert not a["split"].equals(c["split"])

    def test_input_order_irrelevant(self):
        items = items_frame(60)
        shuffled = items.sample(frac=1.0, random_state=9).reset_index(drop=True)
        a = split(items, seed=5).set_index("item_id")["split"]
        b = split(shuffled, seed=5).set_index("item_id")["split"]
        pd.testing.assert_series_equal(a.sort_index(), b.sort_index())

    def test_grouped_split_zero_leakage(self):
        items = items_frame(400, n_geoids=37)
        out = split(items, seed=2, group_by="neighborhood")
        by_split = {s: set(g["geoid"]) for s, g in out.groupby("split")}
        assert by_split["train"] & by_split["val"] == set()
        assert by_split["train"] & by_split["test"] == set()
        assert by_split["val"] & by_split["test"] == set()
        n_tr, n_val, n_te = split_sizes(37, (0.70, 0.15, 0.15))
        assert (len(by_split["train"]), len(by_split["val"]), len(by_split["test"])) == (
            n_tr,
            n_val,
            n_te,
        )

    def test_bad_fractions_rejected(self):
        with pytest.raises(ConfigError):
            split(items_frame(10), fractions=(0.5, 0.2, 0.2))

    def test_empty_items_rejected(self):
        with pytest.raises(EmptyInputError):
            split(items_frame(0))

    def test_bad_group_by_rejected(self):
        with pytest.raises(ConfigError):
            split(items_frame(10), group_by="city")


def test_manifest_roundtrip(tmp_path):
    items = split(items_frame(20), seed=0)
    path = tmp_path / "manifest.csv"
    write_manifest(path, items, meta={"mode": "resizing", "seed": 0})
    back = read_manifest(path)
    assert list(back.columns) == list(items.columns)
    assert back["geoid"].dtype == object  # geoids stay strings
    pd.testing.assert_frame_equal(back, items)

    from aerocensus.dataset import manifest_meta

    assert manifest_meta(path) == {"mode": "resizing", "seed": 0}
