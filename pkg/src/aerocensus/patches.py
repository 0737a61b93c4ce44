"""Model-input representations built from masked neighborhood crops.

Three regimes:

* ``patchify``: zero-pad a crop to a multiple of the patch size and keep the
  grid patches that are more than half nonzero,
* ``resize_to_median``: bilinear resample of the whole crop to the corpus
  median dimensions,
* ``grid_sample``: a tile-anchored square grid of small cells, sampled per
  neighborhood with probability proportional to the cell's in-polygon area,
  capped per neighborhood.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import cv2
import numpy as np
from shapely.geometry import box

from .boundaries import BoundaryRecord
from .errors import InputError
from .raster import Raster, read_window

PATCH_SIZE = 512
GRID_CELL = 112
GRID_CAP = 50
RESIZE_HEIGHT = 1350
RESIZE_WIDTH = 1353
KEEP_THRESHOLD = 0.5


@dataclass
class Patch:
    pixels: np.ndarray
    geoid: str
    grid_row: int
    grid_col: int
    nonzero_fraction: float
    overlap_fraction: float | None = None  # grid mode only
    tile_index: int = 0  # grid mode with several tiles


@dataclass
class ResizedImage:
    pixels: np.ndarray
    geoid: str
    orig_w: int
    orig_h: int


def candidate_count(height: int, width: int, size: int) -> int:
    """Number of grid cells after zero-padding to multiples of ``size``."""
    return math.ceil(height / size) * math.ceil(width / size)


def patchify(
    pixels: np.ndarray,
    geoid: str = "",
    size: int = PATCH_SIZE,
    keep_threshold: float = KEEP_THRESHOLD,
) -> list[Patch]:
    """Split a masked crop into size×size patches, keeping mostly-nonzero ones.

    The crop is zero-padded on the right and bottom so grid coordinates stay
    anchored to the crop origin. A patch survives only when its fraction of
    nonzero pixels (any band) strictly exceeds ``keep_threshold``.
    """
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    h, w = pixels.shape[:2]
    n_rows = math.ceil(h / size)
    n_cols = math.ceil(w / size)
    padded = np.zeros((n_rows * size, n_cols * size, pixels.shape[2]), dtype=pixels.dtype)
    padded[:h, :w] = pixels
    nonzero = padded.any(axis=2)
    out = []
    for r in range(n_rows):
        for c in range(n_cols):
            block = nonzero[r * size : (r + 1) * size, c * size : (c + 1) * size]
            frac = float(block.mean())
            if frac > keep_threshold:
                out.append(
                    Patch(
                        pixels=padded[r * size : (r + 1) * size, c * size : (c + 1) * size],
                        geoid=geoid,
                        grid_row=r,
                        grid_col=c,
                        nonzero_fraction=frac,
                    )
                )
    return out


def resize_to_median(
    pixels: np.ndarray,
    geoid: str = "",
    out_h: int = RESIZE_HEIGHT,
    out_w: int = RESIZE_WIDTH,
) -> ResizedImage:
    """Bilinear resample of a crop to the target (median) dimensions.

    Original dimensions are recorded for downstream resize-error analysis.
    Integer inputs come back in their own dtype, rounded.
    """
    if pixels.size == 0:
        raise InputError("cannot resize an empty crop")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    orig_h, orig_w = pixels.shape[:2]
    resized = cv2.resize(
        pixels.astype(np.float32), (out_w, out_h), interpolation=cv2.INTER_LINEAR
    )
    if resized.ndim == 2:
        resized = resized[:, :, None]
    if np.issubdtype(pixels.dtype, np.integer):
        info = np.iinfo(pixels.dtype)
        resized = np.clip(np.rint(resized), info.min, info.max).astype(pixels.dtype)
    return ResizedImage(pixels=resized, geoid=geoid, orig_w=orig_w, orig_h=orig_h)


def neighborhood_seed(seed: int, geoid: str) -> int:
    """Stable per-neighborhood seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{seed}:{geoid}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def weighted_sample_without_replacement(
    weights: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of k items drawn without replacement, probability ∝ weight.

    Uses exponential-key sampling (keys u^(1/w)); equivalent in distribution
    to sequential draws with renormalization.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise InputError("sampling weights must be positive")
    if k >= len(weights):
        return np.arange(len(weights))
    keys = rng.random(len(weights)) ** (1.0 / weights)
    top = np.argsort(keys, kind="stable")[-k:]
    return np.sort(top)


def _grid_candidates(tile: Raster, boundary: BoundaryRecord, cell: int) -> list[tuple[int, int, float]]:
    """(row, col, overlap_fraction) of tile-grid cells intersecting the polygon."""
    t = tile.transform
    gsd = t.gsd_x
    cell_area = (cell * gsd) ** 2
    n_rows = math.ceil(tile.height / cell)
    n_cols = math.ceil(tile.width / cell)
    poly = boundary.polygon
    minx, miny, maxx, maxy = poly.bounds
    r_lo = max(0, math.floor((t.y_origin - maxy) / gsd / cell))
    r_hi = min(n_rows - 1, math.floor((t.y_origin - miny) / gsd / cell + 1e-9))
    c_lo = max(0, math.floor((minx - t.x_origin) / gsd / cell))
    c_hi = min(n_cols - 1, math.floor((maxx - t.x_origin) / gsd / cell + 1e-9))
    cells = []
    for r in range(r_lo, r_hi + 1):
        for c in range(c_lo, c_hi + 1):
            cx0 = t.x_origin + c * cell * gsd
            cy1 = t.y_origin - r * cell * gsd
            cell_box = box(cx0, cy1 - cell * gsd, cx0 + cell * gsd, cy1)
            overlap = poly.intersection(cell_box).area / cell_area
            if overlap > 0:
                cells.append((r, c, float(overlap)))
    return cells


def _extract_cell(tile: Raster, r: int, c: int, cell: int) -> np.ndarray:
    return read_window(tile, r * cell, (r + 1) * cell, c * cell, (c + 1) * cell)


def grid_sample(
    tile: Raster,
    boundaries: list[BoundaryRecord],
    cell: int = GRID_CELL,
    max_per_hood: int = GRID_CAP,
    seed: int = 0,
) -> list[Patch]:
    """Sample small grid patches per neighborhood from one tile.

    The grid is anchored at the tile origin, so cells can straddle boundary
    lines and one cell can appear for several neighborhoods. Cells that do
    not intersect a neighborhood are discarded. When a neighborhood has more
    candidates than ``max_per_hood``, that many are drawn without replacement
    with probability proportional to overlap fraction, using a per-geoid seed
    so results do not depend on scheduling.
    """
    return grid_sample_tiles([tile], boundaries, cell=cell, max_per_hood=max_per_hood, seed=seed)


def grid_sample_tiles(
    tiles: list[Raster],
    boundaries: list[BoundaryRecord],
    cell: int = GRID_CELL,
    max_per_hood: int = GRID_CAP,
    seed: int = 0,
) -> list[Patch]:
    """Grid sampling over a tile set; the per-neighborhood cap spans tiles.

    Each tile carries its own grid (cells are identified by tile index plus
    grid coordinates), and a neighborhood straddling tiles pools candidates
    from all of them before the weighted draw.
    """
    out: list[Patch] = []
    for b in sorted(boundaries, key=lambda b: b.geoid):
        cells: list[tuple[int, int, int, float]] = []
        for ti, tile in enumerate(tiles):
            cells.extend((ti, r, c, o) for r, c, o in _grid_candidates(tile, b, cell))
        if not cells:
            continue
        if len(cells) > max_per_hood:
            rng = np.random.default_rng(neighborhood_seed(seed, b.geoid))
            weights = np.array([o for _, _, _, o in cells])
            chosen = weighted_sample_without_replacement(weights, max_per_hood, rng)
            cells = [cells[i] for i in chosen]
        for ti, r, c, overlap in cells:
            block = _extract_cell(tiles[ti], r, c, cell)
            out.append(
                Patch(
                    pixels=block,
                    geoid=b.geoid,
                    grid_row=r,
                    grid_col=c,
                    nonzero_fraction=float(block.any(axis=2).mean()),
                    overlap_fraction=overlap,
                    tile_index=ti,
                )
            )
    return out
