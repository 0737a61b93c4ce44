"""Attribution and error-structure analysis for both model branches.

Random-forest attributions are exact interventional Shapley values computed
from the tree structure against an explicit background set: contributions
plus the background-mean baseline reconstruct the prediction to floating
point precision. CNN saliency uses a permutation-sampling Shapley
approximation over a coarse grid of masked superpixel regions; each sampled
permutation telescopes exactly, so the summed map always matches
``prediction − baseline`` up to accumulated float error regardless of the
sampling budget. The resize-error analysis relates absolute test error to
how far each image's original dimensions sat from the resize target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch

from .errors import InputError


@dataclass
class AttributionRecord:
    subject: str
    contributions: np.ndarray  # per-feature (or per-region) signed values
    baseline: float
    prediction: float

    def completeness_gap(self) -> float:
        return float(abs(self.contributions.sum() + self.baseline - self.prediction))


# ---------------------------------------------------------------------------
# random forest: exact interventional tree Shapley
# ---------------------------------------------------------------------------


def _leaf_table(tree) -> list[tuple[float, dict]]:
    """Leaves as (value, {feature: (lo, hi]}) with merged path intervals."""
    left, right = tree.children_left, tree.children_right
    feature, threshold = tree.feature, tree.threshold
    value = tree.value.reshape(-1)
    leaves: list[tuple[float, dict]] = []

    def walk(node: int, bounds: dict):
        if left[node] == -1:
            leaves.append((float(value[node]), dict(bounds)))
            return
        f, thr = int(feature[node]), float(threshold[node])
        lo, hi = bounds.get(f, (-np.inf, np.inf))
        if lo < thr:  # left branch: x[f] <= thr
            saved = bounds.get(f)
            bounds[f] = (lo, min(hi, thr))
            walk(int(left[node]), bounds)
            if saved is None:
                del bounds[f]
            else:
                bounds[f] = saved
        if hi > thr:  # right branch: x[f] > thr
            saved = bounds.get(f)
            bounds[f] = (max(lo, thr), hi)
            walk(int(right[node]), bounds)
            if saved is None:
                del bounds[f]
            else:
                bounds[f] = saved

    walk(0, {})
    return leaves


def _shapley_weights(n: int) -> np.ndarray:
    """W[p, q] = p! q! / (p + q + 1)! for p, q in [0, n]."""
    fact = np.array([math.factorial(i) for i in range(2 * n + 2)], dtype=np.float64)
    w = np.empty((n + 1, n + 1))
    for p in range(n + 1):
        for q in range(n + 1):
            w[p, q] = fact[p] * fact[q] / fact[p + q + 1]
    return w


def _tree_shapley(tree, x32: np.ndarray, z32: np.ndarray, n_features: int) -> np.ndarray:
    """Interventional Shapley values of one tree, averaged over background rows."""
    leaves = _leaf_table(tree)
    m = len(z32)
    phi = np.zeros(n_features)
    max_path = max((len(b) for _, b in leaves), default=0)
    weights = _shapley_weights(max_path)
    for value, bounds in leaves:
        if not bounds:
            continue  # constant tree: reachable by every path, no feature credit
        feats = np.fromiter(bounds.keys(), dtype=np.intp)
        lo = np.array([bounds[f][0] for f in feats], dtype=np.float32)
        hi = np.array([bounds[f][1] for f in feats], dtype=np.float32)
        x_in = (x32[feats] > lo) & (x32[feats] <= hi)
        z_in = (z32[:, feats] > lo) & (z32[:, feats] <= hi)  # (m, p)
        valid = (x_in | z_in).all(axis=1)
        if not valid.any():
            continue
        a = (x_in & ~z_in).sum(axis=1)  # per background row
        b = (~x_in & z_in).sum(axis=1)
        for j, f in enumerate(feats):
            if x_in[j]:
                rows = valid & ~z_in[:, j]
                if rows.any():
                    phi[f] += value * weights[a[rows] - 1, b[rows]].sum()
            else:
                rows = valid & z_in[:, j]
                if rows.any():
                    phi[f] -= value * weights[a[rows], b[rows] - 1].sum()
    return phi / m


def rf_attribution(model, features, background, subject: str = "") -> AttributionRecord:
    """Exact per-feature Shapley attribution of a forest prediction.

    ``background`` supplies the interventional reference distribution; the
    baseline is the forest's mean prediction over it, and contributions plus
    baseline equal the prediction exactly (float64 tolerance).
    """
    x = np.asarray(features, np.float64).reshape(-1)
    bg = np.atleast_2d(np.asarray(background, np.float64))
    n_features = model.n_features_in_
    if x.shape[0] != n_features:
        raise InputError(f"feature vector has length {x.shape[0]}, forest expects {n_features}")
    if bg.shape[1] != n_features:
        raise InputError(f"background has {bg.shape[1]} columns, forest expects {n_features}")
    x32 = x.astype(np.float32)
    z32 = bg.astype(np.float32)
    phi = np.zeros(n_features)
    for est in model.estimators_:
        phi += _tree_shapley(est.tree_, x32, z32, n_features)
    phi /= len(model.estimators_)
    prediction = float(model.predict(x.reshape(1, -1))[0])
    baseline = float(model.predict(bg).mean())
    return AttributionRecord(subject=subject, contributions=phi, baseline=baseline, prediction=prediction)


# ---------------------------------------------------------------------------
# CNN: permutation Shapley over masked superpixel regions
# ---------------------------------------------------------------------------


@dataclass
class SaliencyMap:
    subject: str
    region_values: np.ndarray  # (grid_rows, grid_cols) signed attributions
    pixel_map: np.ndarray  # (H, W) region values painted per pixel
    prediction: float
    baseline: float

    def completeness_gap(self) -> float:
        return float(abs(self.region_values.sum() + self.baseline - self.prediction))


def _region_slices(h: int, w: int, grid: tuple[int, int]):
    gr, gc = grid
    row_edges = np.linspace(0, h, gr + 1).round().astype(int)
    col_edges = np.linspace(0, w, gc + 1).round().astype(int)
    out = []
    for i in range(gr):
        for j in range(gc):
            out.append((i, j, slice(row_edges[i], row_edges[i + 1]), slice(col_edges[j], col_edges[j + 1])))
    return out


def cnn_saliency(
    model,
    patch: np.ndarray,
    grid: tuple[int, int] = (4, 4),
    n_permutations: int = 8,
    seed: int = 0,
    batch_size: int = 16,
    subject: str = "",
) -> SaliencyMap:
    """Signed region attribution of a trained image regressor's output.

    Regions are revealed one at a time in random order starting from an
    all-zeros baseline image; each region's attribution is its average
    marginal effect on the prediction. Positive values push the estimate up.
    """
    from .backbone import normalize_images

    patch = np.asarray(patch)
    if patch.ndim == 2:
        patch = patch[:, :, None]
    h, w = patch.shape[:2]
    regions = _region_slices(h, w, grid)
    n_regions = len(regions)
    rng = np.random.default_rng(seed)
    model.eval()

    # build every cumulative-reveal image for every permutation up front
    images = [np.zeros_like(patch)]
    perm_orders = []
    for _ in range(n_permutations):
        order = rng.permutation(n_regions)
        perm_orders.append(order)
        canvas = np.zeros_like(patch)
        for idx in order:
            _, _, rs, cs = regions[idx]
            canvas[rs, cs] = patch[rs, cs]
            images.append(canvas.copy())

    preds = np.empty(len(images))
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = normalize_images(np.stack(images[i : i + batch_size]))
            preds[i : i + batch_size] = model(torch.from_numpy(batch)).numpy().reshape(-1)

    baseline = float(preds[0])
    values = np.zeros(n_regions)
    pos = 1
    for order in perm_orders:
        prev = baseline
        for idx in order:
            values[idx] += preds[pos] - prev
            prev = preds[pos]
            pos += 1
    values /= n_permutations
    # independent forward of the unmasked patch; telescoping makes the summed
    # map match (prediction - baseline) up to batching float noise
    with torch.no_grad():
        prediction = float(model(torch.from_numpy(normalize_images(patch[None]))).reshape(-1)[0])

    region_values = np.zeros(grid)
    pixel_map = np.zeros((h, w))
    for (i, j, rs, cs), v in zip(regions, values):
        region_values[i, j] = v
        pixel_map[rs, cs] = v
    return SaliencyMap(
        subject=subject,
        region_values=region_values,
        pixel_map=pixel_map,
        prediction=prediction,
        baseline=baseline,
    )


# ---------------------------------------------------------------------------
# resize error structure
# ---------------------------------------------------------------------------


def resize_error_analysis(
    per_item: pd.DataFrame,
    target_h: int,
    target_w: int,
    n_bins: int = 8,
) -> tuple[pd.DataFrame, pd.DataFrame, dict]:
    """Absolute error vs deviation of original dimensions from the resize target.

    Returns (raw triplets, binned mean surface, decay fit). The fit regresses
    log(error + eps) on the mean dimension deviation; a negative rate means
    error shrinks as originals get larger than the target.
    """
    required = {"truth", "prediction", "orig_w", "orig_h"}
    missing = required - set(per_item.columns)
    if missing:
        raise InputError(f"resize analysis needs columns {sorted(missing)}")
    table = pd.DataFrame(
        {
            "geoid": per_item.get("geoid", pd.Series(range(len(per_item)))),
            "width_dev": per_item["orig_w"].to_numpy(float) - target_w,
            "height_dev": per_item["orig_h"].to_numpy(float) - target_h,
            "abs_error": np.abs(per_item["truth"].to_numpy(float) - per_item["prediction"].to_numpy(float)),
        }
    )
    wbins = pd.cut(table["width_dev"], n_bins)
    hbins = pd.cut(table["height_dev"], n_bins)
    binned = (
        table.assign(wbin=wbins.apply(lambda b: b.mid), hbin=hbins.apply(lambda b: b.mid))
        .groupby(["wbin", "hbin"], observed=True)["abs_error"]
        .agg(["mean", "count"])
        .reset_index()
        .rename(columns={"mean": "mean_abs_error", "wbin": "width_dev_mid", "hbin": "height_dev_mid"})
    )
    size_score = (table["width_dev"] + table["height_dev"]).to_numpy() / 2.0
    eps = max(table["abs_error"].to_numpy().max() * 1e-6, 1e-12)
    log_err = np.log(table["abs_error"].to_numpy() + eps)
    if len(table) >= 2 and np.ptp(size_score) > 0:
        slope, intercept = np.polyfit(size_score, log_err, 1)
    else:
        slope, intercept = 0.0, float(log_err.mean())  # degenerate: no spread to fit
    fit = {"decay_rate": float(slope), "intercept": float(intercept), "eps": float(eps)}
    return table, binned, fit
