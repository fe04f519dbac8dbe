"""No-reference point cloud geometry quality assessment by pairwise rank learning."""

from .geometry import (
    PointCloud,
    SpatialIndex,
    estimate_normals,
    load_cloud,
    nearest_neighbor,
    normalize_unit_cube,
    ref_edge_length,
    save_cloud,
)
from .nn import ModelParams
from .training import TrainConfig, predict, rank_pair, train_rank

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "SpatialIndex",
    "estimate_normals",
    "load_cloud",
    "nearest_neighbor",
    "normalize_unit_cube",
    "ref_edge_length",
    "save_cloud",
    "ModelParams",
    "TrainConfig",
    "predict",
    "rank_pair",
    "train_rank",
]
