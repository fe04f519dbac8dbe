"""Point cloud container, file IO, exact spatial queries and normal estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class CloudFormatError(ValueError):
    """Raised when a point cloud file cannot be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable (n, 3) float64 positions with optional unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.array(self.normals, dtype=np.float64, copy=True).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError(f"{len(nrm)} normals for {len(pts)} points")
            lengths = np.linalg.norm(nrm, axis=1)
            if len(nrm) and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    @property
    def has_normals(self):
        return self.normals is not None

    def with_normals(self, normals):
        return PointCloud(self.points, normals)

    def without_normals(self):
        return PointCloud(self.points)

    def bbox(self):
        return self.points.min(axis=0), self.points.max(axis=0)

    def bbox_diagonal(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def subset(self, indices):
        indices = np.asarray(indices)
        nrm = None if self.normals is None else self.normals[indices]
        return PointCloud(self.points[indices], nrm)


class SpatialIndex:
    """Exact nearest-neighbour and radius queries over a fixed point set.

    Backed by a kd-tree; candidate sets are re-checked with plain Euclidean
    distances so results coincide with a linear scan, including the
    lowest-index tie rule for nearest queries.
    """

    def __init__(self, points):
        pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
        pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def nearest(self, queries):
        """Return ``(indices, distances)`` of the nearest point to each query.

        Accepts a single 3-vector or an (m, 3) array.
        """
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        n = len(self.points)
        k = min(2, n)
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        idx = idx[:, 0].copy()
        exact = np.sqrt(np.sum((self.points[idx] - q) ** 2, axis=1))
        if k == 2:
            # possible ties (or kd-tree rounding disagreements) get an exhaustive check
            suspicious = np.flatnonzero(dist[:, 1] <= dist[:, 0] * (1 + 1e-9) + 1e-300)
            for i in suspicious:
                cand = self._tree.query_ball_point(q[i], dist[i, 1] * (1 + 1e-9) + 1e-12)
                cand = np.sort(np.asarray(cand, dtype=np.intp))
                d = np.sqrt(np.sum((self.points[cand] - q[i]) ** 2, axis=1))
                j = int(np.argmin(d))
                idx[i] = cand[j]
                exact[i] = d[j]
        if single:
            return int(idx[0]), float(exact[0])
        return idx, exact

    def radius(self, query, r):
        """Indices (ascending) of all points with distance <= r from ``query``."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = self._tree.query_ball_point(q, r * (1 + 1e-9) + 1e-12)
        cand = np.sort(np.asarray(cand, dtype=np.intp))
        if len(cand) == 0:
            return cand
        d = np.sqrt(np.sum((self.points[cand] - q) ** 2, axis=1))
        return cand[d <= r]

    def knn(self, queries, k):
        """k nearest neighbours (including coincident points) for each query row."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        return idx, dist


def nearest_neighbor(index, q):
    """Nearest point to ``q`` as ``(point, distance)``; ties go to the lowest index."""
    i, d = index.nearest(np.asarray(q, dtype=np.float64))
    return index.points[i].copy(), d


# --- file IO --------------------------------------------------------------

def _parse_floats(tokens, path, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise CloudFormatError(path, lineno, f"cannot parse numbers from {' '.join(tokens)!r}") from None
    if not all(np.isfinite(vals)):
        raise CloudFormatError(path, lineno, "non-finite coordinate")
    return vals


def _read_xyz(path, lines):
    rows = []
    ncols = None
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) not in (3, 6):
            raise CloudFormatError(path, lineno, f"expected 3 or 6 columns, got {len(tokens)}")
        if ncols is None:
            ncols = len(tokens)
        elif len(tokens) != ncols:
            raise CloudFormatError(path, lineno, "inconsistent column count")
        rows.append(_parse_floats(tokens, path, lineno))
    if not rows:
        raise CloudFormatError(path, len(lines), "empty cloud")
    arr = np.asarray(rows, dtype=np.float64)
    normals = arr[:, 3:6] if ncols == 6 else None
    return arr[:, :3], normals


def _read_ply(path, lines):
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(path, 1, "missing 'ply' magic")
    n_vertex = None
    props = []
    in_vertex = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        head = tokens[0]
        if head == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise CloudFormatError(path, lineno, "only ascii PLY is supported")
        elif head in ("comment", "obj_info"):
            continue
        elif head == "element":
            if len(tokens) != 3:
                raise CloudFormatError(path, lineno, "malformed element line")
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tokens[2])
                except ValueError:
                    raise CloudFormatError(path, lineno, "bad vertex count") from None
        elif head == "property":
            if in_vertex:
                if tokens[1] == "list":
                    raise CloudFormatError(path, lineno, "list properties on vertices are not supported")
                props.append(tokens[-1])
        elif head == "end_header":
            body_start = lineno
            break
        else:
            raise CloudFormatError(path, lineno, f"unexpected header keyword {head!r}")
    if body_start is None:
        raise CloudFormatError(path, len(lines), "missing end_header")
    if n_vertex is None:
        raise CloudFormatError(path, body_start, "no vertex element")
    for axis in "xyz":
        if axis not in props:
            raise CloudFormatError(path, body_start, f"vertex property {axis!r} missing")
    cols = [props.index(a) for a in "xyz"]
    has_normals = all(a in props for a in ("nx", "ny", "nz"))
    ncols = [props.index(a) for a in ("nx", "ny", "nz")] if has_normals else None
    rows = []
    lineno = body_start
    for line in lines[body_start:]:
        lineno += 1
        tokens = line.split()
        if not tokens:
            continue
        if len(rows) == n_vertex:
            # trailing elements (faces etc.) are ignored
            break
        if len(tokens) < len(props):
            raise CloudFormatError(path, lineno, f"expected {len(props)} values, got {len(tokens)}")
        rows.append(_parse_floats(tokens[: len(props)], path, lineno))
    if len(rows) < n_vertex:
        raise CloudFormatError(path, lineno, f"expected {n_vertex} vertices, found {len(rows)}")
    if n_vertex == 0:
        raise CloudFormatError(path, body_start, "empty cloud")
    arr = np.asarray(rows, dtype=np.float64)
    return arr[:, cols], (arr[:, ncols] if has_normals else None)


def load_cloud(path, format=None):
    """Read an ascii PLY or whitespace-separated xyz text file.

    ``format`` is ``"ply-ascii"`` or ``"xyz-text"``; when omitted it is
    inferred from the suffix (``.ply`` vs anything else).
    """
    path = Path(path)
    if format is None:
        format = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz-text"
    lines = path.read_text(encoding="utf-8").splitlines()
    if format == "ply-ascii":
        points, normals = _read_ply(path, lines)
    elif format == "xyz-text":
        points, normals = _read_xyz(path, lines)
    else:
        raise ValueError(f"unknown cloud format {format!r}")
    if normals is not None:
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(lengths == 0):
            raise CloudFormatError(path, 0, "zero-length normal")
        normals = normals / lengths[:, None]
    return PointCloud(points, normals)


def save_cloud(path, pc, format=None):
    """Write ``pc`` as ascii PLY or xyz text; floats use repr precision so reads are lossless."""
    path = Path(path)
    if format is None:
        format = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz-text"
    data = pc.points if pc.normals is None else np.hstack([pc.points, pc.normals])
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in data)
    if format == "ply-ascii":
        props = ["x", "y", "z"] + (["nx", "ny", "nz"] if pc.normals is not None else [])
        header = ["ply", "format ascii 1.0", f"element vertex {len(pc)}"]
        header += [f"property double {p}" for p in props]
        header.append("end_header")
        text = "\n".join(header) + "\n" + body + "\n"
    elif format == "xyz-text":
        text = body + "\n"
    else:
        raise ValueError(f"unknown cloud format {format!r}")
    path.write_text(text, encoding="utf-8")


# --- scale and spacing ----------------------------------------------------

def normalize_unit_cube(pc):
    """Translate and uniformly scale so the bounding box sits in [0, 1]^3 with longest side 1.

    Returns ``(cloud, scale)``. Normals are carried over unchanged.
    """
    lo, hi = pc.bbox()
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise DegenerateCloudError("all points coincide; cannot normalize")
    scale = 1.0 / extent
    pts = (pc.points - lo) * scale
    return PointCloud(pts, pc.normals), scale


def ref_edge_length(pc):
    """Mean distance from each point to its nearest other point (l_r)."""
    if len(pc) < 2:
        raise ValueError("reference edge length needs at least 2 points")
    tree = cKDTree(pc.points)
    dist, _ = tree.query(pc.points, k=2)
    return float(np.mean(dist[:, 1]))


# --- normals --------------------------------------------------------------

def _fallback_normals(directions):
    # perpendicular to the principal direction, built from the least-aligned axis
    axes = np.eye(3)[np.argmin(np.abs(directions), axis=1)]
    n = np.cross(directions, axes)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def estimate_normals(pc, k=16, return_degenerate=False, rank_tol=1e-10):
    """PCA normals from each point plus its ``k`` nearest neighbours.

    The normal is the eigenvector of the smallest covariance eigenvalue;
    sign is arbitrary. Neighbourhoods whose two smallest eigenvalues both
    vanish (collinear or coincident points) get a deterministic normal
    perpendicular to their principal direction and are flagged.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(pc) < k + 1:
        raise ValueError(f"need at least {k + 1} points for k={k}, got {len(pc)}")
    pts = pc.points
    _, nbr = cKDTree(pts).query(pts, k=k + 1)
    neigh = pts[nbr]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= rank_tol * scale
    if np.any(degenerate):
        principal = evecs[degenerate, :, 2]
        flat = evals[degenerate, 2] <= np.finfo(float).tiny
        principal[flat] = np.array([1.0, 0.0, 0.0])
        normals[degenerate] = _fallback_normals(principal)
        warnings.warn(f"{int(degenerate.sum())} rank-deficient neighbourhoods; fallback normals used",
                      RuntimeWarning, stacklevel=2)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    out = pc.with_normals(normals)
    if return_degenerate:
        return out, degenerate
    return out
