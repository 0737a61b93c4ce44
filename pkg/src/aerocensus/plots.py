"""Static plot artifacts: cluster sample sheets, choropleths, error surfaces.

Everything renders through the Agg backend to PNG files; no interactive
viewer. Rendering is deterministic given inputs and seed.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PatchCollection
from matplotlib.patches import Polygon as MplPolygon

log = logging.getLogger(__name__)


def cluster_sheet(
    patches: list[np.ndarray],
    assignments: np.ndarray,
    cluster_id: int,
    out_path: str | Path,
    n: int = 16,
    seed: int = 0,
    frequency: float | None = None,
) -> dict:
    """Render a grid of random member patches of one cluster.

    Returns a record with the member ids drawn. An empty cluster produces an
    "empty" notice sheet instead of failing.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    assignments = np.asarray(assignments)
    members = np.flatnonzero(assignments == cluster_id)
    caption = f"cluster {cluster_id}"
    if frequency is not None:
        caption += f" (frequency {frequency:.3f})"
    if members.size == 0:
        fig, ax = plt.subplots(figsize=(4, 2))
        ax.text(0.5, 0.5, f"{caption}: empty", ha="center", va="center")
        ax.axis("off")
        fig.savefig(out_path, dpi=100)
        plt.close(fig)
        return {"cluster_id": cluster_id, "members": [], "empty": True, "path": str(out_path)}
    rng = np.random.default_rng(seed)
    if members.size > n:
        chosen = np.sort(rng.choice(members, size=n, replace=False))
    else:
        chosen = members
    cols = int(np.ceil(np.sqrt(len(chosen))))
    rows = int(np.ceil(len(chosen) / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2 * cols, 2 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, idx in zip(axes.ravel(), chosen):
        img = np.asarray(patches[idx])
        ax.imshow(img[:, :, :3] if img.ndim == 3 else img, interpolation="nearest")
    fig.suptitle(caption)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return {"cluster_id": cluster_id, "members": chosen.tolist(), "empty": False, "path": str(out_path)}


def _polygon_patches(geom):
    polys = geom.geoms if geom.geom_type == "MultiPolygon" else [geom]
    return [MplPolygon(np.asarray(p.exterior.coords), closed=True) for p in polys]


def choropleth(
    values_by_geoid: dict,
    boundaries,
    variable: str,
    out_path: str | Path,
    quantiles: tuple[float, float] = (0.02, 0.98),
    cmap: str = "viridis",
) -> dict:
    """Color polygons by a geoid-keyed value with a legend colorbar.

    Color-scale bounds come from data quantiles so single outliers cannot
    wash out the map. Geoids without geometry are listed in the returned
    sidecar record rather than failing the render.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    by_geoid = {b.geoid: b for b in boundaries}
    missing = sorted(g for g in values_by_geoid if g not in by_geoid)
    present = [(g, float(v)) for g, v in sorted(values_by_geoid.items()) if g in by_geoid]
    if not present:
        raise ValueError("no geoids with geometry to draw")
    vals = np.array([v for _, v in present])
    vmin, vmax = np.quantile(vals, quantiles)
    if vmin == vmax:
        vmin, vmax = vmin - 0.5, vmax + 0.5
    fig, ax = plt.subplots(figsize=(8, 8))
    mpl_patches = []
    colors = []
    for g, v in present:
        for p in _polygon_patches(by_geoid[g].polygon):
            mpl_patches.append(p)
            colors.append(v)
    coll = PatchCollection(mpl_patches, cmap=cmap, edgecolor="black", linewidth=0.2)
    coll.set_array(np.array(colors))
    coll.set_clim(vmin, vmax)
    ax.add_collection(coll)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_title(variable)
    fig.colorbar(coll, ax=ax, label=variable, shrink=0.7)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    if missing:
        log.warning("choropleth: %d geoids lack geometry", len(missing))
    return {"path": str(out_path), "missing_geometry": missing, "vmin": float(vmin), "vmax": float(vmax)}


def resize_error_surface(binned, out_path: str | Path) -> Path:
    """3-D surface of mean absolute error over (width, height) deviation bins."""
    from mpl_toolkits.mplot3d import Axes3D  # noqa: F401  (registers projection)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig = plt.figure(figsize=(8, 6))
    ax = fig.add_subplot(projection="3d")
    x = binned["width_dev_mid"].to_numpy(float)
    y = binned["height_dev_mid"].to_numpy(float)
    z = binned["mean_abs_error"].to_numpy(float)
    ax.plot_trisurf(x, y, z, cmap="viridis", linewidth=0.1)
    ax.set_xlabel("width deviation (px)")
    ax.set_ylabel("height deviation (px)")
    ax.set_zlabel("mean absolute error")
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def saliency_overlay(patch: np.ndarray, pixel_map: np.ndarray, out_path: str | Path) -> Path:
    """Patch beside its signed attribution map (red = raises the estimate)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    img = np.asarray(patch)
    axes[0].imshow(img[:, :, :3] if img.ndim == 3 else img, interpolation="nearest")
    axes[0].set_title("patch")
    axes[0].axis("off")
    bound = float(np.abs(pixel_map).max() or 1.0)
    im = axes[1].imshow(pixel_map, cmap="bwr", vmin=-bound, vmax=bound, interpolation="nearest")
    axes[1].set_title("attribution")
    axes[1].axis("off")
    fig.colorbar(im, ax=axes[1], shrink=0.8)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
