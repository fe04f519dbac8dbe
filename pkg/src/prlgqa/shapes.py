"""Seeded synthetic surface samplers used as stand-in reference clouds."""

import numpy as np

from .geometry import PointCloud

SHAPES = ("sphere", "ellipsoid", "torus", "blob", "cylinder", "saddle")


def _unit_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere(n, seed=0, radius=1.0):
    rng = np.random.default_rng(seed)
    return PointCloud(radius * _unit_sphere(rng, n))


def ellipsoid(n, seed=0, axes=(1.0, 0.7, 0.45)):
    # rejection against the area element keeps the sampling close to uniform
    rng = np.random.default_rng(seed)
    a = np.asarray(axes, dtype=float)
    out = []
    got = 0
    while got < n:
        u = _unit_sphere(rng, 2 * n)
        x = u * a
        g = np.sqrt(np.sum((x / a**2) ** 2, axis=1)) * np.prod(a)
        keep = rng.uniform(0, g.max(), size=len(g)) < g
        out.append(x[keep])
        got += int(keep.sum())
    return PointCloud(np.concatenate(out)[:n])


def torus(n, seed=0, major=1.0, minor=0.35):
    rng = np.random.default_rng(seed)
    out = []
    got = 0
    while got < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        w = rng.uniform(0, major + minor, 2 * n)
        keep = w < major + minor * np.cos(v)
        u, v = u[keep], v[keep]
        ring = major + minor * np.cos(v)
        out.append(np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1))
        got += int(keep.sum())
    return PointCloud(np.concatenate(out)[:n])


def blob(n, seed=0, amplitude=0.25, lobes=3):
    """Sphere with a smooth random radial bump field."""
    rng = np.random.default_rng(seed)
    d = _unit_sphere(rng, n)
    shape_rng = np.random.default_rng([seed, 7])
    centers = _unit_sphere(shape_rng, lobes)
    weights = shape_rng.uniform(-1, 1, lobes)
    bump = np.exp(4.0 * (d @ centers.T - 1.0)) @ weights
    return PointCloud(d * (1.0 + amplitude * bump)[:, None])


def cylinder(n, seed=0, radius=0.5, height=1.5):
    rng = np.random.default_rng(seed)
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    n_side = int(round(n * side / (side + 2 * cap)))
    t = rng.uniform(0, 2 * np.pi, n_side)
    z = rng.uniform(-height / 2, height / 2, n_side)
    pts_side = np.stack([radius * np.cos(t), radius * np.sin(t), z], axis=1)
    m = n - n_side
    rr = radius * np.sqrt(rng.uniform(0, 1, m))
    tt = rng.uniform(0, 2 * np.pi, m)
    zz = np.where(rng.uniform(size=m) < 0.5, -height / 2, height / 2)
    pts_cap = np.stack([rr * np.cos(tt), rr * np.sin(tt), zz], axis=1)
    return PointCloud(np.concatenate([pts_side, pts_cap]))


def saddle(n, seed=0, curvature=0.5):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1, 1, size=(n, 2))
    z = curvature * (xy[:, 0] ** 2 - xy[:, 1] ** 2)
    return PointCloud(np.column_stack([xy, z]))


_MAKERS = {
    "sphere": sphere,
    "ellipsoid": ellipsoid,
    "torus": torus,
    "blob": blob,
    "cylinder": cylinder,
    "saddle": saddle,
}


def make_shape(kind, n, seed=0):
    return _MAKERS[kind](n, seed=seed)


def shape_collection(count, n, seed=0):
    """``count`` clouds cycling through the built-in shapes with distinct seeds."""
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(count)]
    return [make_shape(SHAPES[i % len(SHAPES)], n, seed=seeds[i]) for i in range(count)]
