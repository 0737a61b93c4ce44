from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare
from shapely.geometry import Polygon, box

from aerocensus.boundaries import BoundaryRecord
from aerocensus.patches import (
    candidate_count,
    grid_sample,
    neighborhood_seed,
    patchify,
    resize_to_median,
    weighted_sample_without_replacement,
)
from aerocensus.raster import GridTransform, Raster


def brute_force_retained(pixels: np.ndarray, size: int, thr: float) -> int:
    """Independent oracle: count windows (clipped at edges, zero-padded in
    effect) whose nonzero fraction over size² strictly exceeds thr."""
    h, w = pixels.shape[:2]
    nonzero = pixels.any(axis=2) if pixels.ndim == 3 else pixels != 0
    count = 0
    for r0 in range(0, h, size):
        for c0 in range(0, w, size):
            block = nonzero[r0 : min(r0 + size, h), c0 : min(c0 + size, w)]
            if block.sum() / (size * size) > thr:
                count += 1
    return count


class TestPatchify:
    def test_full_nonzero_single_patch(self):
        pixels = np.full((512, 512, 3), 5, np.uint8)
        out = patchify(pixels, size=512)
        assert len(out) == 1
        assert (out[0].grid_row, out[0].grid_col) == (0, 0)
        assert out[0].nonzero_fraction == 1.0

    def test_fig3_style_six_patch_example(self):
        # a median-sized masked crop whose coverage retains exactly six
        # 512x512 patches (two full rows of three, empty bottom band)
        pixels = np.zeros((1350, 1353, 3), np.uint8)
        pixels[:950, :] = 40
        assert candidate_count(1350, 1353, 512) == 9
        out = patchify(pixels, size=512)
        assert len(out) == brute_force_retained(pixels, 512, 0.5) == 6
        coords = {(p.grid_row, p.grid_col) for p in out}
        assert coords == {(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)}

    def test_known_mask_against_brute_force(self):
        rng = np.random.default_rng(7)
        pixels = (rng.random((1350, 1353, 3)) < 0.4).astype(np.uint8) * 90
        out = patchify(pixels, size=512)
        assert candidate_count(1350, 1353, 512) == 9
        assert len(out) == brute_force_retained(pixels, 512, 0.5)

    def test_small_sparse_crop_empty_result(self):
        pixels = np.zeros((100, 100, 3), np.uint8)
        pixels[:10, :10] = 1
        assert patchify(pixels, size=512) == []

    def test_threshold_is_strict(self):
        size = 8
        pixels = np.zeros((8, 8, 3), np.uint8)
        pixels[:4, :] = 1  # exactly half nonzero
        assert patchify(pixels, size=size) == []
        pixels[4, 0] = 1  # one pixel over half
        assert len(patchify(pixels, size=size)) == 1

    @given(
        h=st.integers(1, 260),
        w=st.integers(1, 260),
        density=st.floats(0.1, 0.9),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=120, deadline=None)
    def test_candidate_formula_and_retained_match_oracle(self, h, w, density, seed):
        size = 64
        rng = np.random.default_rng(seed)
        pixels = (rng.random((h, w, 1)) < density).astype(np.uint8)
        out = patchify(pixels, size=size)
        n_candidates = candidate_count(h, w, size)
        assert n_candidates == math.ceil(h / size) * math.ceil(w / size)
        assert len(out) <= n_candidates
        assert len(out) == brute_force_retained(pixels, size, 0.5)
        for p in out:
            assert p.nonzero_fraction > 0.5
        coords = [(p.grid_row, p.grid_col) for p in out]
        assert len(coords) == len(set(coords))


def reference_bilinear(src: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Direct half-pixel-center bilinear resampler used as the oracle."""
    src = src.astype(np.float64)
    ih, iw = src.shape[:2]
    ys = (np.arange(oh) + 0.5) * (ih / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (iw / ow) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, ih - 1)
    y1 = np.clip(y0 + 1, 0, ih - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, iw - 1)
    x1 = np.clip(x0 + 1, 0, iw - 1)
    wy = np.clip(ys - y0, 0, 1)[:, None, None]
    wx = np.clip(xs - x0, 0, 1)[None, :, None]
    a = src[y0][:, x0]
    b = src[y0][:, x1]
    c = src[y1][:, x0]
    d = src[y1][:, x1]
    return a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c * wy * (1 - wx) + d * wy * wx


class TestResize:
    def test_identity_resample(self):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, (1350, 1353, 3)).astype(np.uint8)
        out = resize_to_median(pixels)
        assert out.pixels.shape == (1350, 1353, 3)
        np.testing.assert_array_equal(out.pixels, pixels)
        assert (out.orig_h, out.orig_w) == (1350, 1353)

    def test_constant_input_constant_output(self):
        pixels = np.full((333, 777, 3), 123, np.uint8)
        out = resize_to_median(pixels)
        assert (out.pixels == 123).all()

    def test_checkerboard_half_scale_matches_reference(self):
        rng = np.random.default_rng(1)
        base = rng.integers(0, 2, (2700, 2706, 1)).astype(np.uint8) * 255
        noise = rng.integers(0, 40, (2700, 2706, 3)).astype(np.uint8)
        pixels = np.clip(base + noise, 0, 255).astype(np.uint8)
        out = resize_to_median(pixels)
        ref = reference_bilinear(pixels, 1350, 1353)
        assert np.abs(out.pixels.astype(np.float64) - ref).max() <= 1.0

    def test_range_preserved_per_channel(self):
        rng = np.random.default_rng(2)
        pixels = rng.integers(17, 212, (400, 500, 3)).astype(np.uint8)
        out = resize_to_median(pixels, out_h=900, out_w=1100)
        for c in range(3):
            assert out.pixels[:, :, c].min() >= pixels[:, :, c].min()
            assert out.pixels[:, :, c].max() <= pixels[:, :, c].max()


def one_hood_tile(n_full=6, n_partial=6, cell=112, partial_frac=0.1):
    """Tile with one neighborhood overlapping n_full cells of the top row
    fully and n_partial cells of the second row at partial_frac of their area."""
    w = max(n_full, n_partial, 1) * cell
    h = 2 * cell
    pixels = np.full((h, w, 3), 10, np.uint8)
    tile = Raster(pixels=pixels, transform=GridTransform(0.0, float(h), 1.0, 1.0))
    top = Polygon.from_bounds(0.0, float(h - cell), float(n_full * cell), float(h))
    if n_partial:
        strip = Polygon.from_bounds(
            0.0, h - cell - partial_frac * cell, float(n_partial * cell), float(h - cell)
        )
        hood_poly = top.union(strip)
    else:
        hood_poly = top
    hood = BoundaryRecord(geoid="g1", polygon=hood_poly)
    return tile, hood


class TestGridSample:
    def test_below_cap_keeps_all(self):
        tile, hood = one_hood_tile()
        out = grid_sample(tile, [hood], cell=112, max_per_hood=50, seed=0)
        assert len(out) == 12
        fulls = [p for p in out if p.grid_row == 0]
        partials = [p for p in out if p.grid_row == 1]
        assert all(p.overlap_fraction == pytest.approx(1.0) for p in fulls)
        assert all(p.overlap_fraction == pytest.approx(0.1) for p in partials)
        assert all(p.pixels.shape == (112, 112, 3) for p in out)

    def test_cap_enforced(self):
        pixels = np.full((7 * 112, 12 * 112, 3), 10, np.uint8)
        tile = Raster(pixels=pixels, transform=GridTransform(0, float(7 * 112), 1, 1))
        hood = BoundaryRecord(geoid="g1", polygon=box(0, 0, 12 * 112, 7 * 112))
        out = grid_sample(tile, [hood], max_per_hood=50, seed=1)
        assert len(out) == 50

    def test_deterministic_and_no_duplicates(self):
        pixels = np.full((6 * 112, 20 * 112, 3), 10, np.uint8)
        tile = Raster(pixels=pixels, transform=GridTransform(0, float(6 * 112), 1, 1))
        hoods = [
            BoundaryRecord(geoid="g1", polygon=box(0, 0, 10 * 112, 6 * 112)),
            BoundaryRecord(geoid="g2", polygon=box(10 * 112, 0, 20 * 112, 6 * 112)),
        ]
        a = grid_sample(tile, hoods, max_per_hood=50, seed=9)
        b = grid_sample(tile, hoods, max_per_hood=50, seed=9)
        assert [(p.geoid, p.grid_row, p.grid_col) for p in a] == [
            (p.geoid, p.grid_row, p.grid_col) for p in b
        ]
        for geoid in ("g1", "g2"):
            coords = [(p.grid_row, p.grid_col) for p in a if p.geoid == geoid]
            assert len(coords) == len(set(coords)) == 50

    def test_cells_outside_all_hoods_discarded(self):
        tile, hood = one_hood_tile(n_full=2, n_partial=0)
        out = grid_sample(tile, [hood], seed=0)
        assert {(p.grid_row, p.grid_col) for p in out} == {(0, 0), (0, 1)}

    def test_two_strata_frequencies_match_sequential_oracle(self):
        tile, hood = one_hood_tile(n_full=6, n_partial=6)
        cap, n_draws = 4, 3000
        counts = np.zeros(12)
        for s in range(n_draws):
            for p in grid_sample(tile, [hood], max_per_hood=cap, seed=s):
                counts[p.grid_row * 6 + p.grid_col] += 1

        weights = np.array([1.0] * 6 + [0.1] * 6)
        oracle_rng = np.random.default_rng(123456)
        oracle_counts = np.zeros(12)
        oracle_draws = 30_000
        for _ in range(oracle_draws):
            w = weights.copy()
            for _ in range(cap):
                probs = w / w.sum()
                j = oracle_rng.choice(12, p=probs)
                oracle_counts[j] += 1
                w[j] = 0.0
        expected = oracle_counts / oracle_counts.sum() * counts.sum()
        _, p_value = chisquare(counts, expected)
        assert p_value > 0.01

    def test_single_draw_probability_proportional_to_weight(self):
        weights = np.array([5.0, 3.0, 1.0, 1.0])
        counts = np.zeros(4)
        for s in range(20_000):
            rng = np.random.default_rng(s)
            idx = weighted_sample_without_replacement(weights, 1, rng)
            counts[idx[0]] += 1
        expected = weights / weights.sum() * counts.sum()
        _, p_value = chisquare(counts, expected)
        assert p_value > 0.01

    def test_neighborhood_seed_stable(self):
        assert neighborhood_seed(7, "abc") == neighborhood_seed(7, "abc")
        assert neighborhood_seed(7, "abc") != neighborhood_seed(8, "abc")
        assert neighborhood_seed(7, "abc") != neighborhood_seed(7, "abd")
