from __future__ import annotations

import numpy as np
import pytest

from aerocensus.boundaries import load_boundaries
from aerocensus.cropper import build_ingest_manifest, pair_and_crop
from aerocensus.metrics import filter_records
from aerocensus.survey import fetch_survey
from aerocensus.synth import (
    BUILDING_MIN_VALUE,
    SyntheticSpec,
    generate_synthetic_city,
    write_synthetic_city,
)


def test_fixed_seed_byte_identical(tmp_path):
    spec = SyntheticSpec(n_hoods=9, seed=42)
    a = generate_synthetic_city(spec)
    b = generate_synthetic_city(spec)
    for ta, tb in zip(a.tiles, b.tiles):
        np.testing.assert_array_equal(ta.pixels, tb.pixels)
    assert a.truth.equals(b.truth)
    assert a.survey_payload == b.survey_payload
    pa = write_synthetic_city(a, tmp_path / "a")
    pb = write_synthetic_city(b, tmp_path / "b")
    for fa, fb in zip(pa["tiles"], pb["tiles"]):
        assert open(fa, "rb").read() == open(fb, "rb").read()
    assert open(pa["boundaries"]).read() == open(pb["boundaries"]).read()
    assert open(pa["survey_fixture"]).read() == open(pb["survey_fixture"]).read()
    assert open(pa["ground_truth"]).read() == open(pb["ground_truth"]).read()


def test_zero_density_city_fully_dropped(tmp_path):
    spec = SyntheticSpec(n_hoods=6, seed=1, fixed_density=0.0)
    city = generate_synthetic_city(spec)
    assert (city.truth["total_pop"] == 0).all()
    # no buildings anywhere
    for tile in city.tiles:
        assert tile.pixels.max() < BUILDING_MIN_VALUE
    paths = write_synthetic_city(city, tmp_path)
    crops, _ = pair_and_crop(city.tiles, city.boundaries, tmp_path / "crops")
    rows = fetch_survey(spec.state_fips, spec.county_fips, spec.year, fixture=paths["survey_fixture"])
    manifest = build_ingest_manifest(crops, rows)
    retained, dropped = filter_records(manifest)
    assert retained.empty
    assert (dropped["reason"] == "zero_population").all()


def count_roof_pixels(city, geoid):
    """Oracle: count bright pixels inside the neighborhood's bbox on the tiles."""
    rec = next(b for b in city.boundaries if b.geoid == geoid)
    minx, miny, maxx, maxy = rec.polygon.bounds
    total = 0
    for tile in city.tiles:
        t = tile.transform
        c0 = max(0, int(round((minx - t.x_origin) / t.gsd_x)))
        c1 = min(tile.width, int(round((maxx - t.x_origin) / t.gsd_x)))
        r0 = max(0, int(round((t.y_origin - maxy) / t.gsd_y)))
        r1 = min(tile.height, int(round((t.y_origin - miny) / t.gsd_y)))
        if r1 > r0 and c1 > c0:
            block = tile.pixels[r0:r1, c0:c1]
            total += int((block.min(axis=2) >= BUILDING_MIN_VALUE - 10).sum())
    return total


def test_building_pixels_scale_with_density():
    # large hoods so integer building counts track population smoothly
    low = generate_synthetic_city(SyntheticSpec(n_hoods=8, seed=7, fixed_density=100.0, hood_px_range=(380, 420)))
    high = generate_synthetic_city(SyntheticSpec(n_hoods=8, seed=7, fixed_density=10_000.0, hood_px_range=(380, 420)))
    low_px = sum(count_roof_pixels(low, g) for g in low.truth["geoid"])
    high_px = sum(count_roof_pixels(high, g) for g in high.truth["geoid"])
    pop_ratio = high.truth["total_pop"].sum() / max(low.truth["total_pop"].sum(), 1)
    assert high_px > 0
    ratio = high_px / max(low_px, 1)
    # pixel counts track the population ratio (~100x) within generator noise
    assert 0.4 * pop_ratio <= ratio <= 2.5 * pop_ratio


def test_ground_truth_roundtrips_through_pipeline(small_city, tmp_path):
    paths = write_synthetic_city(small_city, tmp_path)
    boundaries = load_boundaries(paths["boundaries"]).records
    rows = fetch_survey("99", "001", 2021, fixture=paths["survey_fixture"])
    crops, gaps = pair_and_crop(small_city.tiles, boundaries, tmp_path / "crops")
    assert not gaps
    manifest = build_ingest_manifest(crops, rows)
    retained, _ = filter_records(manifest)
    truth = small_city.truth.set_index("geoid")
    got = retained.set_index("geoid")
    rel = np.abs(got["label_density"] - truth.loc[got.index, "density_true"]) / truth.loc[
        got.index, "density_true"
    ]
    assert rel.max() < 1e-6
    np.testing.assert_allclose(
        got["label_education"], truth.loc[got.index, "education_true"], atol=1e-9
    )
    np.testing.assert_allclose(got["label_income"], truth.loc[got.index, "mhi_true"], atol=0)


def test_survey_invariants_hold(small_city):
    header, *rows = small_city.survey_payload
    for row in rows:
        total, over25, _, b, m, p, d = (int(v) for v in row[:7])
        assert over25 <= total
        assert b + m + p + d <= over25
        assert min(b, m, p, d) >= 0


def test_variable_hood_sizes_give_dimension_spread(small_city):
    assert small_city.truth["height_px"].nunique() > 1
    assert small_city.truth["width_px"].nunique() > 1
