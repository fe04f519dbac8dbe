"""Full-reference geometry metrics: point-to-point, point-to-plane and plane-to-plane.

Every family yields per-point values in both directions (degraded to
reference and reference to degraded); ``pool`` reduces them with MSE,
Hausdorff or PSNR pooling, taking the worse of the two directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, SpatialIndex, estimate_normals

FAMILIES = ("po2po", "po2pl", "pl2pl")
POOLINGS = ("mse", "hausdorff", "psnr")
METRIC_NAMES = tuple(f"{f}_{p}" for f in FAMILIES for p in POOLINGS)

LOWER_BETTER = "lower-better"
HIGHER_BETTER = "higher-better"


@dataclass(frozen=True)
class MetricResult:
    value: float
    orientation: str
    perfect: bool = False

    @property
    def higher_is_better(self):
        return self.orientation == HIGHER_BETTER

    def quality(self):
        """Value mapped so that larger always means better quality."""
        return self.value if self.higher_is_better else -self.value


@dataclass(frozen=True)
class DirectionalValues:
    """Per-point values for both correspondence directions of one metric family."""

    family: str
    deg_to_ref: np.ndarray
    ref_to_deg: np.ndarray


def _ensure_normals(pc, k):
    return pc if pc.has_normals else estimate_normals(pc, k=k)


def po2po_error(ref, deg):
    """Squared distance from each point to its nearest neighbour in the other cloud."""
    _, d_dr = SpatialIndex(ref).nearest(deg.points)
    _, d_rd = SpatialIndex(deg).nearest(ref.points)
    return DirectionalValues("po2po", d_dr**2, d_rd**2)


def po2pl_error(ref, deg, k=16):
    """Squared projection of correspondence vectors onto reference normals.

    Both directions use the reference point's normal; the reference gets
    PCA normals if it has none.
    """
    ref = _ensure_normals(ref, k)
    idx_dr, _ = SpatialIndex(ref).nearest(deg.points)
    proj_dr = np.einsum("ij,ij->i", deg.points - ref.points[idx_dr], ref.normals[idx_dr])
    idx_rd, _ = SpatialIndex(deg).nearest(ref.points)
    proj_rd = np.einsum("ij,ij->i", ref.points - deg.points[idx_rd], ref.normals)
    return DirectionalValues("po2pl", proj_dr**2, proj_rd**2)


def angular_similarity(n1, n2):
    """1 - 2*theta/pi for unoriented normals, theta = arccos|n1 . n2|."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    if np.any(np.linalg.norm(n1, axis=-1) == 0) or np.any(np.linalg.norm(n2, axis=-1) == 0):
        raise ValueError("zero-length normal")
    # atan2 form is exact at theta = 0, unlike arccos near 1
    sin = np.linalg.norm(np.cross(n1, n2), axis=-1)
    cos = np.abs(np.sum(n1 * n2, axis=-1))
    theta = np.arctan2(sin, cos)
    return 1.0 - 2.0 * theta / np.pi


def pl2pl_similarity(ref, deg, k=16):
    ref = _ensure_normals(ref, k)
    deg = _ensure_normals(deg, k)
    idx_dr, _ = SpatialIndex(ref).nearest(deg.points)
    sim_dr = angular_similarity(deg.normals, ref.normals[idx_dr])
    idx_rd, _ = SpatialIndex(deg).nearest(ref.points)
    sim_rd = angular_similarity(ref.normals, deg.normals[idx_rd])
    return DirectionalValues("pl2pl", sim_dr, sim_rd)


def _per_point_error(values):
    if values.family == "pl2pl":
        return 1.0 - values.deg_to_ref, 1.0 - values.ref_to_deg
    return values.deg_to_ref, values.ref_to_deg


def _raw_distance(values, err):
    # Hausdorff works on unsquared distances for the two distance families
    return err if values.family == "pl2pl" else np.sqrt(err)


def _mean(a, deterministic):
    return math.fsum(a.tolist()) / len(a) if deterministic else float(np.mean(a))


def pool(values, pooling, ref, deterministic=True):
    """Reduce directional per-point values to a single :class:`MetricResult`."""
    if len(values.deg_to_ref) == 0 or len(values.ref_to_deg) == 0:
        raise ValueError("cannot pool empty value lists")
    e_dr, e_rd = _per_point_error(values)
    if pooling == "mse":
        return MetricResult(max(_mean(e_dr, deterministic), _mean(e_rd, deterministic)), LOWER_BETTER)
    if pooling == "hausdorff":
        h = max(float(np.max(_raw_distance(values, e_dr))), float(np.max(_raw_distance(values, e_rd))))
        return MetricResult(h, LOWER_BETTER, perfect=h == 0.0)
    if pooling == "psnr":
        mse = max(_mean(e_dr, deterministic), _mean(e_rd, deterministic))
        peak = ref.bbox_diagonal() if isinstance(ref, PointCloud) else float(ref)
        return psnr(mse, peak)
    raise ValueError(f"unknown pooling {pooling!r}")


def psnr(mse, peak):
    """10 log10(peak^2 / mse); a zero MSE gives +inf flagged as perfect."""
    if mse == 0:
        return MetricResult(math.inf, HIGHER_BETTER, perfect=True)
    return MetricResult(10.0 * math.log10(peak**2 / mse), HIGHER_BETTER)


def mean_similarity(values):
    """Headline plane-to-plane score: mean similarity, worse direction."""
    return MetricResult(min(float(np.mean(values.deg_to_ref)), float(np.mean(values.ref_to_deg))),
                        HIGHER_BETTER)


def directional_values(family, ref, deg, k=16):
    if family == "po2po":
        return po2po_error(ref, deg)
    if family == "po2pl":
        return po2pl_error(ref, deg, k=k)
    if family == "pl2pl":
        return pl2pl_similarity(ref, deg, k=k)
    raise ValueError(f"unknown metric family {family!r}")


def compute_metric(name, ref, deg, k=16):
    """Evaluate a metric by name, e.g. ``"po2pl_hausdorff"``."""
    try:
        family, pooling = name.lower().split("_", 1)
    except ValueError:
        raise ValueError(f"bad metric name {name!r}; expected one of {METRIC_NAMES}") from None
    if family not in FAMILIES or pooling not in POOLINGS:
        raise ValueError(f"bad metric name {name!r}; expected one of {METRIC_NAMES}")
    return pool(directional_values(family, ref, deg, k=k), pooling, ref)


def compute_all(ref, deg, k=16):
    """All nine metrics, sharing the correspondence work per family."""
    out = {}
    for family in FAMILIES:
        vals = directional_values(family, ref, deg, k=k)
        for pooling in POOLINGS:
            out[f"{family}_{pooling}"] = pool(vals, pooling, ref)
    return out


def pseudo_mos(ref, deg, k=16):
    """Mean plane-to-plane similarity of each degraded point with its nearest reference point.

    Lies in [0, 1]; 1 means every tangent plane is preserved.
    """
    ref = _ensure_normals(ref, k)
    deg = _ensure_normals(deg, k)
    idx, _ = SpatialIndex(ref).nearest(deg.points)
    sim = angular_similarity(deg.normals, ref.normals[idx])
    return float(min(1.0, max(0.0, math.fsum(sim.tolist()) / len(sim))))
