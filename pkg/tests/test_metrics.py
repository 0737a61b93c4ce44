from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerocensus.errors import DegenerateGeometryError, UndefinedMetricError
from aerocensus.metrics import (
    REASON_CENSUS_ERROR,
    REASON_ZERO_POP_OVER_25,
    REASON_ZERO_POPULATION,
    area_from_mask,
    density,
    education_attainment,
    filter_records,
)


class TestEducationAttainment:
    def test_zero_case(self):
        assert education_attainment(0, 0, 0, 0, 500) == 0.0

    def test_saturation(self):
        assert education_attainment(500, 0, 0, 0, 500) == 100.0

    def test_hand_arithmetic(self):
        # (100+50+10+5)/500 * 100 = 33.0
        assert education_attainment(100, 50, 10, 5, 500) == pytest.approx(33.0, abs=1e-12)

    def test_zero_adults_undefined(self):
        with pytest.raises(UndefinedMetricError):
            education_attainment(1, 0, 0, 0, 0)

    def test_negative_count_rejected(self):
        with pytest.raises(UndefinedMetricError):
            education_attainment(-1, 0, 0, 0, 100)

    @given(
        counts=st.tuples(*[st.integers(0, 200)] * 4),
        adults=st.integers(1, 5000),
        scale=st.integers(1, 50),
    )
    @settings(max_examples=200, deadline=None)
    def test_scale_invariance(self, counts, adults, scale):
        b, m, p, d = counts
        adults = max(adults, b + m + p + d)  # keep the survey invariant
        base = education_attainment(b, m, p, d, adults)
        scaled = education_attainment(b * scale, m * scale, p * scale, d * scale, adults * scale)
        assert scaled == pytest.approx(base, abs=1e-9)
        assert 0.0 <= base <= 100.0


class TestArea:
    def test_single_pixel(self):
        assert area_from_mask(1, 0.6) == pytest.approx(0.36, abs=1e-12)

    def test_hand_arithmetic_one_km2(self):
        assert area_from_mask(2_777_778, 0.6) == pytest.approx(1_000_000.08, abs=1e-6)

    def test_unit_gsd(self):
        assert area_from_mask(1_000_000, 1.0) == 1_000_000.0

    def test_zero_count_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            area_from_mask(0, 0.6)


class TestDensity:
    def test_one_km2(self):
        assert density(1500, 1e6) == 1500.0

    def test_observed_minimum(self):
        # the corpus' low endpoint: 2 persons in one square kilometer
        assert density(2, 1e6) == 2.0

    def test_hand_arithmetic(self):
        assert density(750, 5e5) == 1500.0

    def test_zero_area_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            density(100, 0.0)

    @given(pop=st.integers(1, 10**6), count=st.integers(1, 10**7), gsd=st.floats(0.1, 5.0))
    @settings(max_examples=200, deadline=None)
    def test_density_area_roundtrip(self, pop, count, gsd):
        a = area_from_mask(count, gsd)
        d = density(pop, a)
        assert d * a / 1e6 == pytest.approx(pop, rel=1e-9)


def make_manifest(rows):
    base = {
        "crop_path": "x.tif",
        "height": 100,
        "width": 100,
        "gsd": 0.6,
        "nonzero_count": 10_000,
        "nonzero_fraction": 1.0,
        "total_pop": 100,
        "pop_over_25": 60,
        "median_income": 50_000,
        "bachelors": 10,
        "masters": 5,
        "professional": 1,
        "doctorate": 1,
    }
    return pd.DataFrame([{**base, **r} for r in rows])


class TestFilterRecords:
    def test_zero_population_dropped(self):
        retained, dropped = filter_records(make_manifest([{"geoid": "a", "total_pop": 0}]))
        assert retained.empty
        assert dropped.iloc[0]["reason"] == REASON_ZERO_POPULATION

    def test_missing_income_is_census_error(self):
        retained, dropped = filter_records(make_manifest([{"geoid": "a", "median_income": ""}]))
        assert dropped.iloc[0]["reason"] == REASON_CENSUS_ERROR

    def test_zero_adult_population_dropped(self):
        _, dropped = filter_records(make_manifest([{"geoid": "a", "pop_over_25": 0}]))
        assert dropped.iloc[0]["reason"] == REASON_ZERO_POP_OVER_25

    def test_clean_records_all_retained(self):
        manifest = make_manifest([{"geoid": f"g{i:02d}"} for i in range(10)])
        retained, dropped = filter_records(manifest)
        assert len(retained) == 10 and dropped.empty
        assert retained.iloc[0]["label_density"] == pytest.approx(
            1e6 * 100 / (10_000 * 0.36)
        )

    def test_partition_and_idempotence(self):
        manifest = make_manifest(
            [
                {"geoid": "a"},
                {"geoid": "b", "total_pop": 0},
                {"geoid": "c", "median_income": ""},
                {"geoid": "d"},
            ]
        )
        retained, dropped = filter_records(manifest)
        assert set(retained["geoid"]) | set(dropped["geoid"]) == {"a", "b", "c", "d"}
        assert set(retained["geoid"]) & set(dropped["geoid"]) == set()
        # survivors re-enter with their labels; a second pass drops nothing
        manifest2 = manifest[manifest["geoid"].isin(retained["geoid"])]
        retained2, dropped2 = filter_records(manifest2)
        assert dropped2.empty
        pd.testing.assert_frame_equal(retained, retained2)

    def test_labels_match_formula_oracles(self):
        retained, _ = filter_records(make_manifest([{"geoid": "a"}]))
        row = retained.iloc[0]
        area = area_from_mask(10_000, 0.6)
        assert row["area_m2"] == area
        assert row["label_density"] == density(100, area)
        assert row["label_education"] == education_attainment(10, 5, 1, 1, 60)
        assert row["label_income"] == 50_000
