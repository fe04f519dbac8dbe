"""
Patches, hierarchical features and the weighted quality index
=============================================================

"""

import numpy as np
from prlgqa import gqanet
from prlgqa.geometry import normalize_unit_cube
from prlgqa.nn import ModelParams
from prlgqa.shapes import make_shape

pc, _ = normalize_unit_cube(make_shape("cylinder", 8000, seed=1))

# farthest point sampling spreads the patch centres over the surface
centres = gqanet.farthest_point_sample(pc, 16, seed=0)
r = gqanet.auto_radius(pc, 128)
patches = gqanet.make_patches(pc, pc.points[centres], r, 128)
print("radius", round(r, 4), "raw neighbours per patch", patches.raw_counts)

# an untrained network: 960 pooled features per patch, a score and a weight each
params = ModelParams.init(seed=0)
feats = gqanet.extract_features(params, patches.scaled())
S, s, w = gqanet.quality_index(params, patches.scaled())
print(feats.shape, params.n_parameters(), "parameters")
print("s", np.round(s, 3))
print("w", np.round(w, 3))
print("S =", S, " between", s.min(), "and", s.max())
