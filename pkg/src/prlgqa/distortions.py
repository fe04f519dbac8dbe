"""Seven geometric distortion generators with five severity levels each.

Noise and grid parameters scale with the reference edge length ``l_r`` of the
source cloud; octree resolutions are absolute and assume a cloud normalized
to the unit cube.
"""

from __future__ import annotations

import enum

import numpy as np

from .geometry import PointCloud

KINDS = ("GN", "UN", "IN", "EN", "OC", "RS", "GS")
LEVELS = (1, 2, 3, 4, 5)

GN_SIGMA = (0.1, 0.2, 0.35, 0.5, 0.7)          # x l_r
UN_HALF_WIDTH = (0.3, 0.6, 1.05, 1.5, 2.1)     # x l_r, also the impulse candidate range
IN_THRESHOLD = 0.1                             # x l_r
EN_MEAN = (0.1, 0.2, 0.35, 0.5, 0.7)           # x l_r
OC_RESOLUTION = (0.01, 0.0116, 0.014, 0.019, 0.025)
RS_FRACTION = (0.15, 0.25, 0.40, 0.55, 0.70)
GS_CELL = (1.2, 1.4, 1.65, 2.0, 2.5)           # x l_r


class ImpulseMode(str, enum.Enum):
    """How the 0.1 l_r threshold turns uniform candidates into impulses.

    ZERO_BELOW: per axis, candidates with |v| <= threshold become 0.
    POINT_SELECT: a point moves by its full candidate only if some axis exceeds the threshold.
    CLAMP: every axis moves, with magnitude raised to at least the threshold.
    """

    ZERO_BELOW = "zero_below"
    POINT_SELECT = "point_select"
    CLAMP = "clamp"


def _check_level(level):
    if level not in LEVELS:
        raise ValueError(f"level must be in 1..5, got {level!r}")
    return level - 1


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _moved(pc, offsets):
    return PointCloud(pc.points + offsets)


# --- parameter-level primitives -----------------------------------------

def gaussian_noise(pc, sigma, seed):
    return _moved(pc, _rng(seed).normal(0.0, sigma, size=pc.points.shape))


def uniform_noise(pc, half_width, seed):
    return _moved(pc, _rng(seed).uniform(-half_width, half_width, size=pc.points.shape))


def impulse_noise(pc, half_width, threshold, seed, mode=ImpulseMode.ZERO_BELOW):
    mode = ImpulseMode(mode)
    v = _rng(seed).uniform(-half_width, half_width, size=pc.points.shape)
    big = np.abs(v) > threshold
    if mode is ImpulseMode.ZERO_BELOW:
        off = np.where(big, v, 0.0)
    elif mode is ImpulseMode.POINT_SELECT:
        off = np.where(big.any(axis=1, keepdims=True), v, 0.0)
    else:
        if half_width <= threshold:
            off = np.zeros_like(v)
        else:
            off = np.sign(v) * np.maximum(np.abs(v), threshold)
    return _moved(pc, off)


def exponential_noise(pc, mean, seed):
    rng = _rng(seed)
    mag = rng.exponential(mean, size=pc.points.shape) if mean > 0 else np.zeros(pc.points.shape)
    sign = rng.choice([-1.0, 1.0], size=pc.points.shape)
    return _moved(pc, sign * mag)


def octree_quantize(pc, resolution, check_normalized=True):
    """Snap points to the centres of cubic cells of side ``resolution`` and drop duplicates.

    Output keeps first-occurrence order.
    """
    if check_normalized:
        lo, hi = pc.bbox()
        if np.max(hi - lo) > 1 + 1e-9:
            raise ValueError("octree compression expects a cloud normalized to the unit cube")
    cells = np.floor(pc.points / resolution).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    first = np.sort(first)
    return PointCloud((cells[first] + 0.5) * resolution)


def random_subset(pc, keep_fraction, seed):
    n = len(pc)
    count = int(np.floor(n * keep_fraction + 0.5))
    if count < 2:
        raise ValueError(f"random downsampling would leave {count} points")
    idx = np.sort(_rng(seed).choice(n, size=count, replace=False))
    return PointCloud(pc.points[idx])


def grid_average(pc, cell):
    """Centroid of the points falling in each occupied grid cell (grid anchored at the bbox minimum)."""
    lo = pc.points.min(axis=0)
    cells = np.floor((pc.points - lo) / cell).astype(np.int64)
    _, first, inverse = np.unique(cells, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    counts = np.bincount(inverse)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, pc.points)
    centroids = sums / counts[:, None]
    order = np.argsort(first, kind="stable")
    return PointCloud(centroids[order])


# --- level-indexed generators -------------------------------------------

def apply_gaussian_noise(pc, l_r, level, seed):
    return gaussian_noise(pc, GN_SIGMA[_check_level(level)] * l_r, seed)


def apply_uniform_noise(pc, l_r, level, seed):
    return uniform_noise(pc, UN_HALF_WIDTH[_check_level(level)] * l_r, seed)


def apply_impulse_noise(pc, l_r, level, seed, mode=ImpulseMode.ZERO_BELOW):
    w = UN_HALF_WIDTH[_check_level(level)] * l_r
    return impulse_noise(pc, w, IN_THRESHOLD * l_r, seed, mode=mode)


def apply_exponential_noise(pc, l_r, level, seed):
    return exponential_noise(pc, EN_MEAN[_check_level(level)] * l_r, seed)


def apply_octree_compression(pc, level):
    return octree_quantize(pc, OC_RESOLUTION[_check_level(level)])


def apply_random_downsample(pc, level, seed):
    return random_subset(pc, 1.0 - RS_FRACTION[_check_level(level)], seed)


def apply_grid_downsample(pc, l_r, level):
    return grid_average(pc, GS_CELL[_check_level(level)] * l_r)


def level_parameter(kind, level):
    """Table value for ``kind`` at ``level`` (relative to l_r except OC and RS)."""
    i = _check_level(level)
    table = {
        "GN": GN_SIGMA, "UN": UN_HALF_WIDTH, "IN": UN_HALF_WIDTH, "EN": EN_MEAN,
        "OC": OC_RESOLUTION, "RS": RS_FRACTION, "GS": GS_CELL,
    }
    return table[kind][i]


def distort(pc, kind, level, l_r, seed, impulse_mode=ImpulseMode.ZERO_BELOW):
    """Dispatch to the generator for ``kind``; deterministic in (pc, level, seed)."""
    if kind == "GN":
        return apply_gaussian_noise(pc, l_r, level, seed)
    if kind == "UN":
        return apply_uniform_noise(pc, l_r, level, seed)
    if kind == "IN":
        return apply_impulse_noise(pc, l_r, level, seed, mode=impulse_mode)
    if kind == "EN":
        return apply_exponential_noise(pc, l_r, level, seed)
    if kind == "OC":
        return apply_octree_compression(pc, level)
    if kind == "RS":
        return apply_random_downsample(pc, level, seed)
    if kind == "GS":
        return apply_grid_downsample(pc, l_r, level)
    raise ValueError(f"unknown distortion kind {kind!r}")
