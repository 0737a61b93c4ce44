"""Pairing of imagery tiles with neighborhood boundaries into masked crops.

Each neighborhood becomes one crop covering the polygon's bounding box,
mosaicked from however many tiles it spans, with pixels outside the polygon
zeroed. Masking uses a pixel-center-in-polygon test so pixel counts are
deterministic and area arithmetic downstream is exact.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from shapely import contains_xy

from .boundaries import BoundaryRecord
from .errors import InputError
from .raster import GridTransform, Raster, mosaic_window, write_geotiff

log = logging.getLogger(__name__)

INGEST_MANIFEST_NAME = "ingest_manifest.csv"


@dataclass
class RasterCrop:
    """Masked per-neighborhood crop: zero outside the polygon, georeferenced."""

    pixels: np.ndarray
    gsd: float
    transform: GridTransform
    geoid: str
    nonzero_fraction: float
    nonzero_count: int
    coverage_fraction: float
    imagery_year: int | None = None
    multi_year: bool = False
    path: Path | None = None


def polygon_mask(polygon, transform: GridTransform, height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the polygon."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    xs, ys = transform.pixel_centers(rows.ravel(), cols.ravel())
    inside = contains_xy(polygon, xs, ys)
    return inside.reshape(height, width)


def crop_one(tiles: list[Raster], boundary: BoundaryRecord, grid: GridTransform) -> RasterCrop | None:
    """Crop and mask one neighborhood; None when no tile covers its bbox.

    The crop window is anchored to the shared tile pixel grid and its size is
    exactly ceil(bbox_extent / gsd) per axis.
    """
    gsd = grid.gsd_x
    minx, miny, maxx, maxy = boundary.polygon.bounds
    # tolerant snapping: pixel-aligned bounds must not straddle a cell due to
    # floating-point representation of world coordinates
    col0 = math.floor((minx - grid.x_origin) / gsd + 1e-6)
    row0 = math.floor((grid.y_origin - maxy) / gsd + 1e-6)
    width = max(1, math.ceil((maxx - minx) / gsd - 1e-6))
    height = max(1, math.ceil((maxy - miny) / gsd - 1e-6))
    x0, y1 = grid.pixel_to_world(row0, col0)

    relevant = [t for t in tiles if _bbox_overlaps(t, minx, miny, maxx, maxy)]
    if not relevant:
        return None
    pixels, covered = mosaic_window(relevant, x0, y1, height, width, gsd)
    for nd in {t.nodata for t in relevant if t.nodata is not None}:
        covered &= ~np.all(pixels == nd, axis=2)
    transform = GridTransform(x0, y1, gsd, gsd)
    mask = polygon_mask(boundary.polygon, transform, height, width)
    if not mask.any():
        return None
    kept = mask & covered
    coverage = float(kept.sum() / mask.sum())
    if coverage == 0.0:
        return None
    pixels = pixels.copy()
    pixels[~kept] = 0
    years = [t.tags.get("year") for t in relevant if t.tags.get("year") is not None]
    year = None
    multi_year = False
    if years:
        uniq = sorted(set(years))
        multi_year = len(uniq) > 1
        # dominant year by covered pixel contribution
        if multi_year:
            counts = {}
            for t in relevant:
                y = t.tags.get("year")
                if y is None:
                    continue
                counts[y] = counts.get(y, 0) + _overlap_pixels(t, x0, y1, height, width)
            year = max(sorted(counts), key=lambda y: counts[y])
        else:
            year = uniq[0]
    return RasterCrop(
        pixels=pixels,
        gsd=gsd,
        transform=transform,
        geoid=boundary.geoid,
        nonzero_fraction=float(kept.mean()),
        nonzero_count=int(kept.sum()),
        coverage_fraction=coverage,
        imagery_year=year,
        multi_year=multi_year,
    )


def _bbox_overlaps(tile: Raster, minx, miny, maxx, maxy) -> bool:
    tminx, tminy, tmaxx, tmaxy = tile.bounds()
    return not (tmaxx <= minx or tminx >= maxx or tmaxy <= miny or tminy >= maxy)


def _overlap_pixels(tile: Raster, x0, y1, height, width) -> int:
    tminx, tminy, tmaxx, tmaxy = tile.bounds()
    gsd = tile.transform.gsd_x
    w = max(0.0, min(tmaxx, x0 + width * gsd) - max(tminx, x0))
    h = max(0.0, min(tmaxy, y1) - max(tminy, y1 - height * gsd))
    return int(round(w * h / (gsd * gsd)))


def pair_and_crop(
    tiles: list[Raster],
    boundaries: list[BoundaryRecord],
    out_dir: str | Path,
    bands: str = "rgb",
    boundaries_epsg: int | None = None,
    workers: int = 0,
) -> tuple[list[RasterCrop], list[dict]]:
    """Crop every neighborhood whose polygon intersects tile coverage.

    Crops are written as georeferenced TIFFs named by geoid. Neighborhoods
    without any coverage go to the returned gap report instead of failing the
    run. All tiles must share one gsd and one CRS; a CRS mismatch is an
    explicit error (reproject externally).
    """
    if not tiles:
        raise InputError("no tiles supplied")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = tiles[0].transform
    crs = tiles[0].crs_epsg
    for t in tiles[1:]:
        if not math.isclose(t.transform.gsd_x, grid.gsd_x, rel_tol=1e-9):
            raise InputError("tiles have mixed gsd")
        if t.crs_epsg != crs:
            raise InputError(f"tile CRS mismatch: {t.crs_epsg} vs {crs}; reproject externally")
    if boundaries_epsg is not None and crs is not None and boundaries_epsg != crs:
        raise InputError(
            f"boundary CRS {boundaries_epsg} does not match tile CRS {crs}; reproject externally"
        )
    tiles = [_select_bands(t, bands) for t in tiles]

    ordered = sorted(boundaries, key=lambda b: b.geoid)

    def work(boundary: BoundaryRecord):
        crop = crop_one(tiles, boundary, grid)
        if crop is None:
            return boundary.geoid, None
        crop.path = out_dir / f"{boundary.geoid}.tif"
        write_geotiff(
            crop.path,
            Raster(pixels=crop.pixels, transform=crop.transform, crs_epsg=crs, nodata=0),
        )
        return boundary.geoid, crop

    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, ordered))
    else:
        results = [work(b) for b in ordered]

    crops = [c for _, c in results if c is not None]
    gaps = [{"geoid": g, "reason": "no_tile_coverage"} for g, c in results if c is None]
    if gaps:
        log.warning("%d neighborhoods had no tile coverage", len(gaps))
    return crops, gaps


def _select_bands(tile: Raster, bands: str) -> Raster:
    if bands == "rgb" and tile.bands > 3:
        return Raster(
            pixels=tile.pixels[:, :, :3],
            transform=tile.transform,
            crs_epsg=tile.crs_epsg,
            nodata=tile.nodata,
            tags=tile.tags,
        )
    if bands == "rgbir" and tile.bands < 4:
        raise InputError(f"rgbir requested but tile has {tile.bands} bands")
    return tile


def build_ingest_manifest(crops: list[RasterCrop], survey_rows) -> pd.DataFrame:
    """Join crops with survey rows on geoid; the contract passed downstream.

    Only geoids present on both sides are emitted (unmatched counts logged),
    sorted by geoid so re-runs are byte-identical.
    """
    survey_by_geoid = {r.geoid: r for r in survey_rows}
    rows = []
    unmatched_crops = 0
    for crop in sorted(crops, key=lambda c: c.geoid):
        srow = survey_by_geoid.pop(crop.geoid, None)
        if srow is None:
            unmatched_crops += 1
            continue
        rows.append(
            {
                "geoid": crop.geoid,
                "crop_path": str(crop.path),
                "height": crop.pixels.shape[0],
                "width": crop.pixels.shape[1],
                "gsd": crop.gsd,
                "nonzero_count": crop.nonzero_count,
                "nonzero_fraction": crop.nonzero_fraction,
                "coverage_fraction": crop.coverage_fraction,
                "imagery_year": crop.imagery_year if crop.imagery_year is not None else "",
                "multi_year": int(crop.multi_year),
                "total_pop": _na(srow.total_pop),
                "pop_over_25": _na(srow.pop_over_25),
                "median_income": _na(srow.median_income),
                "bachelors": _na(srow.bachelors),
                "masters": _na(srow.masters),
                "professional": _na(srow.professional),
                "doctorate": _na(srow.doctorate),
                "survey_year": srow.year,
            }
        )
    if unmatched_crops or survey_by_geoid:
        log.info(
            "ingest join: %d crops without survey rows, %d survey rows without crops",
            unmatched_crops,
            len(survey_by_geoid),
        )
    return pd.DataFrame(rows)


def _na(value):
    return "" if value is None else value
