"""Synthetic city generator for desk-scale verification.

Builds a rectangular grid of "neighborhoods" over a synthetic raster and
draws building-like rectangles at a count proportional to each
neighborhood's assigned population density. Income and education are
assigned through a known monotone function of mean building size and
greenness plus noise, then converted to survey counts, so the full pipeline
can be exercised and scored against recoverable ground truth.

Outputs use exactly the formats the ingestion stage consumes (georeferenced
TIFF tiles, GeoJSON boundaries, a survey fixture in endpoint format), so
downstream stages are blind to real vs synthetic data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import box

from .boundaries import BoundaryRecord, write_boundaries
from .raster import GridTransform, Raster, write_geotiff
from .survey import DEFAULT_VARIABLE_MAP

GROUND_TRUTH_NAME = "ground_truth.csv"
BOUNDARIES_NAME = "boundaries.geojson"
SURVEY_FIXTURE_NAME = "survey_fixture.json"

_X_ORIGIN = 600_000.0
_Y_ORIGIN = 4_000_000.0
_EPSG = 32610

BUILDING_MIN_VALUE = 150  # separates roofs from background/vegetation in tests


@dataclass
class SyntheticSpec:
    n_hoods: int = 64
    density_range: tuple[float, float] = (2.0, 15_000.0)  # persons/km², log-uniform
    hood_px_range: tuple[int, int] = (90, 200)
    building_px_range: tuple[int, int] = (4, 11)  # per-hood mean roof edge
    persons_per_building: float = 4.0
    noise: float = 0.08
    income_range: tuple[float, float] = (20_000.0, 250_001.0)
    gsd: float = 0.6
    tile_grid: tuple[int, int] = (2, 2)
    seed: int = 0
    state_fips: str = "99"
    county_fips: str = "001"
    year: int = 2021
    fixed_density: float | None = None  # overrides density_range (e.g. 0 for the blank city)


@dataclass
class SyntheticCity:
    tiles: list[Raster]
    boundaries: list[BoundaryRecord]
    survey_payload: list[list]
    truth: pd.DataFrame
    spec: SyntheticSpec = field(repr=False, default=None)


def _hood_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _paint_hood(rng, canvas, py0, px0, h, w, n_buildings, mean_bsize, greenness):
    """Paint one neighborhood; returns the number of painted roof pixels."""
    base = np.empty((h, w, 3), np.float32)
    base[..., 0] = 55.0
    base[..., 1] = 72.0 + 55.0 * greenness
    base[..., 2] = 50.0
    base += rng.normal(0.0, 3.0, (h, w, 3)).astype(np.float32)
    # vegetation blobs at a rate tied to greenness (kept darker than roofs)
    n_veg = int(greenness * h * w / 900.0)
    for _ in range(n_veg):
        cy, cx = rng.integers(2, h - 2), rng.integers(2, w - 2)
        rad = int(rng.integers(2, 5))
        yy, xx = np.ogrid[-rad : rad + 1, -rad : rad + 1]
        disk = yy * yy + xx * xx <= rad * rad
        y0, y1 = max(0, cy - rad), min(h, cy + rad + 1)
        x0, x1 = max(0, cx - rad), min(w, cx + rad + 1)
        sub = disk[y0 - (cy - rad) : y1 - (cy - rad), x0 - (cx - rad) : x1 - (cx - rad)]
        base[y0:y1, x0:x1][sub] = (35.0, 95.0 + 25.0 * greenness, 35.0)

    roof_pixels = 0
    if n_buildings > 0:
        pitch = int(mean_bsize) + 4
        slots_r = max(1, (h - 2) // pitch)
        slots_c = max(1, (w - 2) // pitch)
        capacity = slots_r * slots_c
        n_draw = min(n_buildings, capacity)
        chosen = rng.choice(capacity, size=n_draw, replace=False)
        for slot in np.sort(chosen):
            sr, sc = divmod(int(slot), slots_c)
            bsize = int(np.clip(round(mean_bsize * rng.uniform(0.75, 1.35)), 2, pitch - 1))
            jy = int(rng.integers(0, max(1, pitch - bsize)))
            jx = int(rng.integers(0, max(1, pitch - bsize)))
            y0 = 1 + sr * pitch + jy
            x0 = 1 + sc * pitch + jx
            y1, x1 = min(h, y0 + bsize), min(w, x0 + bsize)
            shade = rng.uniform(BUILDING_MIN_VALUE + 5, 235)
            base[y0:y1, x0:x1] = shade + rng.normal(0, 2.0, 3).astype(np.float32)
            roof_pixels += (y1 - y0) * (x1 - x0)
    canvas[py0 : py0 + h, px0 : px0 + w] = np.clip(base, 1, 255).astype(np.uint8)
    return roof_pixels


def generate_synthetic_city(spec: SyntheticSpec) -> SyntheticCity:
    """Generate tiles, boundaries, and survey rows with known ground truth."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC17F]))
    n_rows = max(1, int(np.floor(np.sqrt(spec.n_hoods))))
    n_cols = int(np.ceil(spec.n_hoods / n_rows))
    row_heights = rng.integers(spec.hood_px_range[0], spec.hood_px_range[1] + 1, n_rows)
    col_widths = rng.integers(spec.hood_px_range[0], spec.hood_px_range[1] + 1, n_cols)
    city_h = int(row_heights.sum())
    city_w = int(col_widths.sum())
    canvas = np.ones((city_h, city_w, 3), np.uint8)

    row_offsets = np.concatenate([[0], np.cumsum(row_heights)])
    col_offsets = np.concatenate([[0], np.cumsum(col_widths)])
    gsd = spec.gsd
    smin, smax = spec.building_px_range

    boundaries: list[BoundaryRecord] = []
    truth_rows = []
    survey_rows = []
    for i in range(spec.n_hoods):
        r, c = divmod(i, n_cols)
        hrng = _hood_rng(spec.seed, i)
        h, w = int(row_heights[r]), int(col_widths[c])
        py0, px0 = int(row_offsets[r]), int(col_offsets[c])
        area_m2 = h * w * gsd * gsd

        if spec.fixed_density is not None:
            density_target = spec.fixed_density
        else:
            lo, hi = spec.density_range
            density_target = float(np.exp(hrng.uniform(np.log(lo), np.log(hi))))
        total_pop = int(round(density_target * area_m2 / 1e6))
        n_buildings = int(np.ceil(total_pop / spec.persons_per_building)) if total_pop else 0

        mean_bsize = float(hrng.uniform(smin, smax))
        greenness = float(hrng.uniform(0.0, 1.0))
        roof_px = _paint_hood(hrng, canvas, py0, px0, h, w, n_buildings, mean_bsize, greenness)

        size_norm = (mean_bsize - smin) / (smax - smin)
        u = float(np.clip(0.55 * size_norm + 0.45 * greenness + spec.noise * hrng.normal(), 0, 1))
        mhi = int(round(spec.income_range[0] + (spec.income_range[1] - spec.income_range[0]) * u))
        v = float(np.clip(0.70 * greenness + 0.30 * size_norm + spec.noise * hrng.normal(), 0, 1))

        pop_over_25 = int(round(0.65 * total_pop))
        attained = int(round(v * pop_over_25))
        bach = int(np.floor(0.60 * attained))
        mast = int(np.floor(0.25 * attained))
        prof = int(np.floor(0.10 * attained))
        doct = attained - bach - mast - prof
        education = 100.0 * attained / pop_over_25 if pop_over_25 > 0 else 0.0

        geoid = f"{spec.state_fips}{spec.county_fips}{i:06d}0"
        minx = _X_ORIGIN + px0 * gsd
        maxx = _X_ORIGIN + (px0 + w) * gsd
        maxy = _Y_ORIGIN - py0 * gsd
        miny = _Y_ORIGIN - (py0 + h) * gsd
        boundaries.append(
            BoundaryRecord(
                geoid=geoid,
                polygon=box(minx, miny, maxx, maxy),
                state_fips=spec.state_fips,
                county_fips=spec.county_fips,
            )
        )
        survey_rows.append(
            {
                "geoid": geoid,
                "total_pop": total_pop,
                "pop_over_25": pop_over_25,
                "median_income": mhi,
                "bachelors": bach,
                "masters": mast,
                "professional": prof,
                "doctorate": doct,
            }
        )
        truth_rows.append(
            {
                "geoid": geoid,
                "height_px": h,
                "width_px": w,
                "area_m2": area_m2,
                "total_pop": total_pop,
                "density_true": 1e6 * total_pop / area_m2,
                "mhi_true": mhi,
                "education_true": education,
                "mean_building_px": mean_bsize,
                "greenness": greenness,
                "n_buildings": n_buildings,
                "roof_pixels": roof_px,
            }
        )

    tiles = _cut_tiles(canvas, spec, city_h, city_w)
    payload = _survey_payload(survey_rows)
    truth = pd.DataFrame(truth_rows).sort_values("geoid").reset_index(drop=True)
    return SyntheticCity(tiles=tiles, boundaries=boundaries, survey_payload=payload, truth=truth, spec=spec)


def _cut_tiles(canvas: np.ndarray, spec: SyntheticSpec, city_h: int, city_w: int) -> list[Raster]:
    tr, tc = spec.tile_grid
    tiles = []
    row_edges = np.linspace(0, city_h, tr + 1).round().astype(int)
    col_edges = np.linspace(0, city_w, tc + 1).round().astype(int)
    for i in range(tr):
        for j in range(tc):
            r0, r1 = row_edges[i], row_edges[i + 1]
            c0, c1 = col_edges[j], col_edges[j + 1]
            tiles.append(
                Raster(
                    pixels=canvas[r0:r1, c0:c1].copy(),
                    transform=GridTransform(
                        _X_ORIGIN + c0 * spec.gsd, _Y_ORIGIN - r0 * spec.gsd, spec.gsd, spec.gsd
                    ),
                    crs_epsg=_EPSG,
                    nodata=0,
                    tags={"year": spec.year},
                )
            )
    return tiles


def _survey_payload(rows: list[dict]) -> list[list]:
    """Rows in survey-endpoint format (header, then string-valued records)."""
    codes = DEFAULT_VARIABLE_MAP
    header = list(codes.values()) + ["state", "county", "tract", "block group"]
    payload = [header]
    for r in sorted(rows, key=lambda r: r["geoid"]):
        g = r["geoid"]
        payload.append(
            [str(r[field]) for field in codes] + [g[:2], g[2:5], g[5:11], g[11:]]
        )
    return payload


def write_synthetic_city(city: SyntheticCity, out_dir: str | Path) -> dict:
    """Persist a generated city in pipeline-consumable formats; returns paths."""
    out_dir = Path(out_dir)
    tiles_dir = out_dir / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    tile_paths = []
    for i, tile in enumerate(city.tiles):
        p = tiles_dir / f"tile_{i:03d}.tif"
        write_geotiff(p, tile)
        tile_paths.append(str(p))
    boundaries_path = out_dir / BOUNDARIES_NAME
    write_boundaries(boundaries_path, city.boundaries)
    fixture_path = out_dir / SURVEY_FIXTURE_NAME
    fixture_path.write_text(json.dumps(city.survey_payload))
    truth_path = out_dir / GROUND_TRUTH_NAME
    city.truth.to_csv(truth_path, index=False)
    return {
        "tiles": tile_paths,
        "boundaries": str(boundaries_path),
        "survey_fixture": str(fixture_path),
        "ground_truth": str(truth_path),
    }
