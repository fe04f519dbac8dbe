import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prlgqa.distortions import (
    EN_MEAN,
    GN_SIGMA,
    KINDS,
    LEVELS,
    ImpulseMode,
    apply_exponential_noise,
    apply_gaussian_noise,
    apply_grid_downsample,
    apply_impulse_noise,
    apply_octree_compression,
    apply_random_downsample,
    apply_uniform_noise,
    distort,
    grid_average,
    impulse_noise,
    level_parameter,
    octree_quantize,
    uniform_noise,
)
from prlgqa.geometry import PointCloud

ZEROS = PointCloud(np.zeros((100_000, 3)))


def unit_cloud(n, seed=0):
    return PointCloud(np.random.default_rng(seed).uniform(size=(n, 3)))


def test_level_tables():
    assert level_parameter("GN", 5) == 0.7
    assert level_parameter("EN", 3) == 0.35
    assert level_parameter("UN", 1) == 0.3
    assert level_parameter("OC", 2) == 0.0116
    assert level_parameter("RS", 4) == 0.55
    assert level_parameter("GS", 3) == 1.65
    with pytest.raises(ValueError):
        level_parameter("GN", 0)
    with pytest.raises(ValueError):
        distort(ZEROS, "XX", 1, 1.0, 0)


# --- noise ------------------------------------------------------------------

def test_gaussian_level1_std():
    off = apply_gaussian_noise(ZEROS, 1.0, 1, seed=0).points
    assert abs(off.std() - 0.1) <= 0.003
    assert abs(off.mean()) < 3 * 0.1 / math.sqrt(off.size) * 2


def test_uniform_level1_bounds_and_mean():
    off = apply_uniform_noise(ZEROS, 1.0, 1, seed=0).points
    assert np.max(np.abs(off)) <= 0.3
    # std of the mean of 3e5 uniform(-w, w) samples is w / sqrt(3 * 3e5)
    assert abs(off.mean()) <= 3 * 0.3 / math.sqrt(3 * off.size)


def test_uniform_zero_width_is_identity():
    pc = unit_cloud(50)
    np.testing.assert_array_equal(uniform_noise(pc, 0.0, 1).points, pc.points)


@pytest.mark.parametrize("level", LEVELS)
def test_impulse_threshold_and_zero_fraction(level):
    off = apply_impulse_noise(ZEROS, 1.0, level, seed=level).points
    nz = off[off != 0]
    assert np.all(np.abs(nz) > 0.1)
    w = level_parameter("UN", level)
    p = 0.1 / w  # uniform CDF mass of |v| <= 0.1
    frac = np.mean(off == 0)
    assert abs(frac - p) <= 5 * math.sqrt(p * (1 - p) / off.size)


def test_impulse_narrow_width_is_identity():
    pc = unit_cloud(30)
    for mode in ImpulseMode:
        np.testing.assert_array_equal(impulse_noise(pc, 0.05, 0.1, 0, mode=mode).points, pc.points)


def test_impulse_alternative_modes():
    sel = impulse_noise(ZEROS, 0.3, 0.1, 0, mode="point_select").points
    moved = np.any(sel != 0, axis=1)
    assert np.all(np.max(np.abs(sel[moved]), axis=1) > 0.1)
    clamp = impulse_noise(ZEROS, 0.3, 0.1, 0, mode="clamp").points
    assert np.all(np.abs(clamp) >= 0.1) and np.all(np.abs(clamp) <= 0.3)


def test_exponential_level1_mean_and_sign():
    off = apply_exponential_noise(ZEROS, 1.0, 1, seed=0).points
    assert abs(np.abs(off).mean() - 0.1) <= 0.003
    assert abs(np.mean(off > 0) - 0.5) < 0.01


@pytest.mark.parametrize("kind", ["GN", "UN", "IN", "EN"])
def test_noise_preserves_count_and_is_deterministic(kind):
    pc = unit_cloud(500)
    a = distort(pc, kind, 3, 0.01, seed=7)
    b = distort(pc, kind, 3, 0.01, seed=7)
    assert len(a) == len(pc)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, distort(pc, kind, 3, 0.01, seed=8).points)


@pytest.mark.parametrize("kind", ["GN", "UN", "EN"])
def test_displacement_increases_with_level(kind):
    pc = unit_cloud(10_000)
    for seed in range(20):
        disp = [np.mean(np.linalg.norm(distort(pc, kind, lv, 0.01, seed).points - pc.points, axis=1))
                for lv in LEVELS]
        assert all(a < b for a, b in zip(disp, disp[1:])), (seed, disp)


def test_table_values_are_monotone():
    for kind in KINDS:
        vals = [level_parameter(kind, lv) for lv in LEVELS]
        assert vals == sorted(vals)
    assert GN_SIGMA == EN_MEAN


# --- octree ------------------------------------------------------------------

def test_octree_one_cell():
    out = octree_quantize(PointCloud([[0.001, 0.002, 0.003], [0.004, 0.005, 0.006]]), 0.01)
    np.testing.assert_allclose(out.points, [[0.005, 0.005, 0.005]])


def test_octree_adjacent_cells():
    out = octree_quantize(PointCloud([[0.004, 0, 0], [0.014, 0, 0]]), 0.01)
    np.testing.assert_allclose(out.points, [[0.005, 0.005, 0.005], [0.015, 0.005, 0.005]])


def test_octree_fine_resolution_keeps_distinct_points():
    pc = unit_cloud(300)
    assert len(octree_quantize(pc, 1e-9)) == 300


def test_octree_rejects_unnormalized():
    with pytest.raises(ValueError):
        apply_octree_compression(PointCloud([[0, 0, 0], [2, 0, 0]]), 1)


@pytest.mark.parametrize("level", LEVELS)
def test_octree_within_expanded_bbox(level):
    pc = unit_cloud(2000, seed=level)
    out = apply_octree_compression(pc, level)
    res = level_parameter("OC", level)
    lo, hi = pc.bbox()
    assert len(out) <= len(pc)
    assert np.all(out.points >= lo - res) and np.all(out.points <= hi + res)
    # every output is the centre of the cell holding some input point
    cells_in = {tuple(c) for c in np.floor(pc.points / res).astype(int)}
    cells_out = {tuple(c) for c in np.floor(out.points / res).astype(int)}
    assert cells_out == cells_in


# --- random subsampling ---------------------------------------------------------

def test_random_downsample_counts():
    pc = unit_cloud(1000)
    assert len(apply_random_downsample(pc, 1, 0)) == 850
    assert len(apply_random_downsample(pc, 5, 0)) == 300


def test_random_downsample_subset_and_errors():
    pc = unit_cloud(1000)
    out = apply_random_downsample(pc, 3, 4)
    rows = {tuple(p) for p in pc.points}
    assert all(tuple(p) in rows for p in out.points)
    with pytest.raises(ValueError):
        apply_random_downsample(unit_cloud(4), 5, 0)  # 1.2 -> 1 point


# --- grid averaging --------------------------------------------------------------

def test_grid_centroid():
    out = grid_average(PointCloud([[0, 0, 0], [0.1, 0, 0]]), 1.0)
    np.testing.assert_allclose(out.points, [[0.05, 0, 0]])


def test_grid_one_point_per_cell_is_identity():
    pts = np.array([[0, 0, 0], [2.5, 0, 0], [0, 5.5, 1.5]], dtype=float)
    np.testing.assert_allclose(grid_average(PointCloud(pts), 1.0).points, pts)


@pytest.mark.parametrize("level", LEVELS)
def test_grid_count_is_occupied_cells(level):
    pc = unit_cloud(3000, seed=level)
    l_r = 0.02
    out = apply_grid_downsample(pc, l_r, level)
    cell = level_parameter("GS", level) * l_r
    lo = pc.points.min(axis=0)
    occupied = {tuple(c) for c in np.floor((pc.points - lo) / cell).astype(int)}
    assert len(out) == len(occupied)
    lo, hi = pc.bbox()
    assert np.all(out.points >= lo - cell) and np.all(out.points <= hi + cell)


# --- properties -----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(KINDS), level=st.sampled_from(LEVELS), seed=st.integers(0, 2**32 - 1),
       n=st.integers(20, 200))
def test_generators_deterministic(kind, level, seed, n):
    pc = unit_cloud(n, seed=n)
    a = distort(pc, kind, level, 0.05, seed)
    b = distort(pc, kind, level, 0.05, seed)
    np.testing.assert_array_equal(a.points, b.points)
    if kind in ("GN", "UN", "IN", "EN"):
        assert len(a) == n
