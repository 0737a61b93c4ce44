"""Minimal georeferenced-raster I/O on top of tifffile.

Rasters are pixel arrays with a north-up affine transform (no rotation,
which covers orthorectified imagery). GeoTIFF georeferencing is encoded
with the standard ModelPixelScale + ModelTiepoint tags plus an optional
EPSG code in the GeoKeyDirectory, so files round-trip through GDAL-based
tools even though this module does not depend on GDAL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tifffile

from .errors import InputError

TAG_DATETIME = 306
TAG_MODEL_PIXEL_SCALE = 33550
TAG_MODEL_TIEPOINT = 33922
TAG_GEO_KEY_DIRECTORY = 34735
TAG_GDAL_NODATA = 42113

_GT_MODEL_TYPE_KEY = 1024
_PROJECTED_CS_KEY = 3072
_MODEL_TYPE_PROJECTED = 1


@dataclass(frozen=True)
class GridTransform:
    """North-up affine georeference: world x grows with columns, y shrinks with rows."""

    x_origin: float
    y_origin: float
    gsd_x: float
    gsd_y: float

    def __post_init__(self):
        if self.gsd_x <= 0 or self.gsd_y <= 0:
            raise InputError(f"gsd must be positive, got ({self.gsd_x}, {self.gsd_y})")

    def pixel_to_world(self, row: float, col: float) -> tuple[float, float]:
        """World coordinate of the upper-left corner of pixel (row, col)."""
        return self.x_origin + col * self.gsd_x, self.y_origin - row * self.gsd_y

    def world_to_pixel(self, x: float, y: float) -> tuple[float, float]:
        """Fractional (row, col) of a world coordinate."""
        return (self.y_origin - y) / self.gsd_y, (x - self.x_origin) / self.gsd_x

    def pixel_centers(self, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x_origin + (np.asarray(cols) + 0.5) * self.gsd_x
        ys = self.y_origin - (np.asarray(rows) + 0.5) * self.gsd_y
        return xs, ys

    def window(self, row0: int, col0: int) -> "GridTransform":
        """Transform of a sub-window whose upper-left pixel is (row0, col0)."""
        x, y = self.pixel_to_world(row0, col0)
        return GridTransform(x, y, self.gsd_x, self.gsd_y)


@dataclass
class Raster:
    """Pixel array (H, W, C) with georeference and optional metadata."""

    pixels: np.ndarray
    transform: GridTransform
    crs_epsg: int | None = None
    nodata: float | None = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise InputError(f"raster pixels must be HxWxC, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def bands(self) -> int:
        return self.pixels.shape[2]

    def bounds(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy) in world coordinates."""
        t = self.transform
        return (
            t.x_origin,
            t.y_origin - self.height * t.gsd_y,
            t.x_origin + self.width * t.gsd_x,
            t.y_origin,
        )


def write_geotiff(path, raster: Raster) -> None:
    t = raster.transform
    extratags = [
        (TAG_MODEL_PIXEL_SCALE, "d", 3, (t.gsd_x, t.gsd_y, 0.0)),
        (TAG_MODEL_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, t.x_origin, t.y_origin, 0.0)),
    ]
    if raster.crs_epsg is not None:
        keys = (
            1, 1, 0, 2,
            _GT_MODEL_TYPE_KEY, 0, 1, _MODEL_TYPE_PROJECTED,
            _PROJECTED_CS_KEY, 0, 1, int(raster.crs_epsg),
        )
        extratags.append((TAG_GEO_KEY_DIRECTORY, "H", len(keys), keys))
    if raster.nodata is not None:
        nodata = str(int(raster.nodata)) if float(raster.nodata).is_integer() else str(raster.nodata)
        extratags.append((TAG_GDAL_NODATA, "s", 0, nodata))
    if raster.tags.get("year") is not None:
        extratags.append((TAG_DATETIME, "s", 0, f"{int(raster.tags['year']):04d}:01:01 00:00:00"))
    pixels = raster.pixels
    if pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    tifffile.imwrite(
        path,
        pixels,
        photometric="rgb" if raster.bands >= 3 else "minisblack",
        extratags=extratags,
        metadata=None,
    )


def read_geotiff(path) -> Raster:
    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        pixels = page.asarray()
        tags = {tag.code: tag.value for tag in page.tags.values()}
    if TAG_MODEL_PIXEL_SCALE not in tags or TAG_MODEL_TIEPOINT not in tags:
        raise InputError(f"{path}: not a georeferenced TIFF (missing pixel-scale/tiepoint tags)")
    sx, sy = tags[TAG_MODEL_PIXEL_SCALE][:2]
    tie = tags[TAG_MODEL_TIEPOINT]
    # tiepoint maps raster (col, row) = (tie[0], tie[1]) to world (tie[3], tie[4])
    x_origin = float(tie[3]) - float(tie[0]) * float(sx)
    y_origin = float(tie[4]) + float(tie[1]) * float(sy)
    crs_epsg = None
    if TAG_GEO_KEY_DIRECTORY in tags:
        keys = tags[TAG_GEO_KEY_DIRECTORY]
        for i in range(4, len(keys), 4):
            if keys[i] == _PROJECTED_CS_KEY:
                crs_epsg = int(keys[i + 3])
    nodata = None
    if TAG_GDAL_NODATA in tags:
        try:
            nodata = float(str(tags[TAG_GDAL_NODATA]).strip("\x00 "))
        except ValueError:
            nodata = None
    meta = {}
    if TAG_DATETIME in tags:
        try:
            meta["year"] = int(str(tags[TAG_DATETIME])[:4])
        except ValueError:
            pass
    return Raster(
        pixels=pixels,
        transform=GridTransform(x_origin, y_origin, float(sx), float(sy)),
        crs_epsg=crs_epsg,
        nodata=nodata,
        tags=meta,
    )


def read_window(tile: Raster, row0: int, row1: int, col0: int, col1: int) -> np.ndarray:
    """Window of a tile clipped to its extent; out-of-extent pixels are zero.

    The returned array always has shape (row1-row0, col1-col0, C).
    """
    out = np.zeros((row1 - row0, col1 - col0, tile.bands), dtype=tile.pixels.dtype)
    r0, r1 = max(row0, 0), min(row1, tile.height)
    c0, c1 = max(col0, 0), min(col1, tile.width)
    if r1 > r0 and c1 > c0:
        out[r0 - row0 : r1 - row0, c0 - col0 : c1 - col0] = tile.pixels[r0:r1, c0:c1]
    return out


def mosaic_window(
    tiles: list[Raster], x0: float, y1: float, height: int, width: int, gsd: float
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble a pixel window anchored at world (x0, y1) from overlapping tiles.

    Returns (pixels, covered) where covered marks pixels supplied by at least
    one tile. Tiles must share the window's gsd; later tiles win overlaps only
    where earlier tiles had no coverage, so seams are coverage-driven.
    """
    bands = tiles[0].bands if tiles else 1
    dtype = tiles[0].pixels.dtype if tiles else np.uint8
    out = np.zeros((height, width, bands), dtype=dtype)
    covered = np.zeros((height, width), dtype=bool)
    for tile in tiles:
        t = tile.transform
        if not (
            math.isclose(t.gsd_x, gsd, rel_tol=1e-9) and math.isclose(t.gsd_y, gsd, rel_tol=1e-9)
        ):
            raise InputError(
                f"tile gsd ({t.gsd_x}, {t.gsd_y}) does not match window gsd {gsd}"
            )
        # offset of the window origin inside this tile, in whole pixels
        drow = (t.y_origin - y1) / gsd
        dcol = (x0 - t.x_origin) / gsd
        row_off = round(drow)
        col_off = round(dcol)
        if not (math.isclose(drow, row_off, abs_tol=1e-6) and math.isclose(dcol, col_off, abs_tol=1e-6)):
            raise InputError("tile grids are not pixel-aligned with the requested window")
        block = read_window(tile, row_off, row_off + height, col_off, col_off + width)
        r0 = max(0, -row_off)
        r1 = min(height, tile.height - row_off)
        c0 = max(0, -col_off)
        c1 = min(width, tile.width - col_off)
        if r1 <= r0 or c1 <= c0:
            continue
        region = np.zeros((height, width), dtype=bool)
        region[r0:r1, c0:c1] = True
        fresh = region & ~covered
        out[fresh] = block[fresh]
        covered |= region
    return out, covered
