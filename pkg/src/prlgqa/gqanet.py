"""GQANet: radius patches around FPS centres, hierarchical max-pooled point
features and a weighted per-patch quality head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, SpatialIndex, ref_edge_length
from .nn import BLOCK_DIMS, dense_backward, dense_forward, maxpool_backward, maxpool_points, relu, sigmoid


# --- patches ----------------------------------------------------------------

def farthest_point_sample(pc, n_samples, seed=0, start=None):
    """Greedy farthest point sampling; returns indices into ``pc``.

    The first index is drawn from ``seed`` unless ``start`` is given; each
    later pick maximises the distance to the selected set, lowest index on ties.
    """
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    n = len(points)
    if not 1 <= n_samples <= n:
        raise ValueError(f"cannot sample {n_samples} centres from {n} points")
    first = int(np.random.default_rng(seed).integers(n)) if start is None else int(start)
    chosen = np.empty(n_samples, dtype=np.intp)
    chosen[0] = first
    min_d = np.sum((points - points[first]) ** 2, axis=1)
    for i in range(1, n_samples):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        np.minimum(min_d, np.sum((points - points[nxt]) ** 2, axis=1), out=min_d)
    return chosen


@dataclass(frozen=True)
class Patch:
    center: np.ndarray
    rel_points: np.ndarray
    raw_count: int

    @property
    def empty(self):
        return self.raw_count == 0


@dataclass(frozen=True)
class PatchSet:
    """``N`` patches stacked: ``rel`` is (N, n, 3) centre-relative coordinates."""

    centers: np.ndarray
    rel: np.ndarray
    raw_counts: np.ndarray
    radius: float = 1.0

    def scaled(self):
        """Relative coordinates divided by the gathering radius (unit-ball patches)."""
        return self.rel / self.radius

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i):
        return Patch(self.centers[i], self.rel[i], int(self.raw_counts[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def empty_flags(self):
        return self.raw_counts == 0

    @property
    def points_per_patch(self):
        return self.rel.shape[1]


def default_radius(l_r, n_points):
    """Radius expected to hold about ``n_points`` on a randomly sampled surface.

    Random surface samples of density rho have mean nearest-neighbour
    distance 1 / (2 sqrt(rho)), so rho = 1 / (4 l_r^2) and a disc of radius
    2 l_r sqrt(n / pi) holds about n points.
    """
    return 2.0 * l_r * math.sqrt(n_points / math.pi)


def make_patches(pc, centers, radius, n_points, seed=0, index=None):
    """Gather the points within ``radius`` of each centre into fixed-size patches.

    Overfull neighbourhoods keep the ``n_points`` nearest; short ones are
    padded by seeded resampling of the gathered points. A centre with no
    neighbours yields an all-zero patch with ``raw_count`` 0.
    """
    if radius <= 0 or n_points < 1:
        raise ValueError("radius and n_points must be positive")
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    index = SpatialIndex(pc) if index is None else index
    pts = index.points
    rng = np.random.default_rng(seed)
    rel = np.zeros((len(centers), n_points, 3))
    counts = np.zeros(len(centers), dtype=np.intp)
    for i, c in enumerate(centers):
        idx = index.radius(c, radius)
        counts[i] = len(idx)
        if len(idx) == 0:
            continue
        d = np.sum((pts[idx] - c) ** 2, axis=1)
        idx = idx[np.lexsort((idx, d))]
        if len(idx) > n_points:
            idx = idx[:n_points]
        elif len(idx) < n_points:
            idx = np.concatenate([idx, rng.choice(idx, size=n_points - len(idx), replace=True)])
        rel[i] = pts[idx] - c
    return PatchSet(centers.copy(), rel, counts, float(radius))


def paired_patches(pc_a, pc_b, n_patches, radius, n_points, seed=0):
    """Patches for both clouds around the same FPS centres taken from ``pc_a``."""
    centers = pc_a.points[farthest_point_sample(pc_a, n_patches, seed=seed)]
    return (make_patches(pc_a, centers, radius, n_points, seed=seed),
            make_patches(pc_b, centers, radius, n_points, seed=seed))


def single_patches(pc, n_patches, radius, n_points, seed=0):
    centers = pc.points[farthest_point_sample(pc, n_patches, seed=seed)]
    return make_patches(pc, centers, radius, n_points, seed=seed)


def whole_cloud_patch(pc, n_points, seed=0, center=None):
    """The entire cloud as one patch: FPS down to ``n_points`` (resampling if short)."""
    pts = pc.points
    rng = np.random.default_rng(seed)
    if len(pts) >= n_points:
        idx = farthest_point_sample(pc, n_points, seed=seed)
    else:
        idx = np.concatenate([np.arange(len(pts)), rng.choice(len(pts), n_points - len(pts))])
    if center is None:
        lo, hi = pc.bbox()
        center = (lo + hi) / 2
    center = np.asarray(center, dtype=np.float64)
    rel = pts[idx] - center
    reach = float(np.max(np.linalg.norm(rel, axis=1))) or 1.0
    return PatchSet(center[None, :], rel[None], np.array([len(pts)]), reach)


def auto_radius(pc, n_points):
    return default_radius(ref_edge_length(pc), n_points)


# --- network forward / backward ------------------------------------------

@dataclass
class ForwardCache:
    rel: np.ndarray
    pre: list        # block pre-activations, (N, n, d_k)
    post: list       # block activations
    argmax: list     # per-block pooling argmax, (N, d_k)
    features: np.ndarray
    head_s: list     # (inputs, pre-activation) per head layer
    head_w: list
    s: np.ndarray
    w: np.ndarray
    S: float
    equal_weights: bool


def _run_blocks(params, rel):
    depth = max(params.block_subset)
    pre, post, pooled, argmax = [], [], [], []
    x = rel
    for k in range(depth):
        z = dense_forward(params.blocks[k], x)
        a = relu(z)
        p, arg = maxpool_points(a)
        pre.append(z)
        post.append(a)
        pooled.append(p)
        argmax.append(arg)
        x = a
    feats = np.concatenate([pooled[b - 1] for b in params.block_subset], axis=-1)
    return feats, pre, post, argmax


def extract_features(params, patches):
    """Concatenated max-pooled block activations; (N, 960) for the full block set.

    Accepts a :class:`PatchSet`, a single (n, 3) patch or an (N, n, 3) stack.
    """
    rel = patches.rel if isinstance(patches, PatchSet) else np.asarray(patches, dtype=np.float64)
    single = rel.ndim == 2
    rel = rel[None] if single else rel
    if rel.shape[-1] != 3:
        raise ValueError("patch points must be 3-vectors")
    feats = _run_blocks(params, rel)[0]
    return feats[0] if single else feats


def _run_head(head, x):
    cache = []
    for i, layer in enumerate(head):
        z = dense_forward(layer, x)
        cache.append((x, z))
        x = relu(z) if i < len(head) - 1 else z
    return x[:, 0], cache


def _head_backward(head, cache, grad_logit, grads_head):
    g = grad_logit[:, None]
    for i in range(len(head) - 1, -1, -1):
        x, z = cache[i]
        if i < len(head) - 1:
            g = g * (z > 0)
        gx, gw, gb = dense_backward(head[i], x, g)
        grads_head[i].weight += gw
        grads_head[i].bias += gb
        g = gx
    return g


def weighted_index(s, w):
    """sum(w*s) / sum(w) with exactly rounded sums (order independent).

    Non-finite inputs or weights that all underflow to zero give NaN, which
    the training loop reports as a non-finite loss.
    """
    ws = w * s
    if not (np.all(np.isfinite(ws)) and np.all(np.isfinite(w))):
        return math.nan
    total = math.fsum(w.tolist())
    if total == 0.0:
        return math.nan
    return math.fsum(ws.tolist()) / total


def forward(params, patches, equal_weights=False):
    """Score one cloud. Returns ``(S, cache)``; the cache feeds :func:`backward`."""
    rel = patches.rel if isinstance(patches, PatchSet) else np.asarray(patches, dtype=np.float64)
    if rel.ndim != 3 or rel.shape[0] < 1:
        raise ValueError("expected a non-empty (N, n, 3) patch stack")
    feats, pre, post, argmax = _run_blocks(params, rel)
    logit_s, cache_s = _run_head(params.head_s, feats)
    s = sigmoid(logit_s)
    if equal_weights:
        w, cache_w = np.ones_like(s), None
    else:
        logit_w, cache_w = _run_head(params.head_w, feats)
        w = sigmoid(logit_w)
    S = weighted_index(s, w)
    return S, ForwardCache(rel, pre, post, argmax, feats, cache_s, cache_w, s, w, S, equal_weights)


def quality_index(params, patches, equal_weights=False):
    """Overall index S and the per-patch ``(s, w)`` arrays."""
    S, cache = forward(params, patches, equal_weights=equal_weights)
    return S, cache.s, cache.w


def backward(params, cache, grad_S, grads=None):
    """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/dS."""
    if cache is None:
        raise RuntimeError("backward called without a forward cache")
    grads = params.zeros_like() if grads is None else grads
    s, w, S = cache.s, cache.w, cache.S
    W = math.fsum(w.tolist())
    grad_s = grad_S * w / W
    grad_feats = _head_backward(params.head_s, cache.head_s, grad_s * s * (1 - s), grads.head_s)
    if not cache.equal_weights:
        grad_w = grad_S * (s - S) / W
        grad_feats = grad_feats + _head_backward(params.head_w, cache.head_w, grad_w * w * (1 - w), grads.head_w)

    # split the feature gradient back into per-block pooled gradients
    pooled_grad = {}
    off = 0
    for b in params.block_subset:
        d = BLOCK_DIMS[b]
        pooled_grad[b] = grad_feats[:, off:off + d]
        off += d

    n_pts = cache.rel.shape[1]
    carry = None
    for k in range(len(cache.pre) - 1, -1, -1):
        g = np.zeros_like(cache.post[k]) if carry is None else carry
        if (k + 1) in pooled_grad:
            g = g + maxpool_backward(pooled_grad[k + 1], cache.argmax[k], n_pts)
        g = g * (cache.pre[k] > 0)
        x_in = cache.rel if k == 0 else cache.post[k - 1]
        gx, gw, gb = dense_backward(params.blocks[k], x_in, g)
        grads.blocks[k].weight += gw
        grads.blocks[k].bias += gb
        carry = gx if k > 0 else None
    return grads
