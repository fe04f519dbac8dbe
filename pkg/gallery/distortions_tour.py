"""
Seven geometry distortions at five levels
=========================================

"""

# a synthetic torus, scaled into the unit cube
import numpy as np
from prlgqa.distortions import KINDS, LEVELS, distort, level_parameter
from prlgqa.geometry import normalize_unit_cube, ref_edge_length
from prlgqa.shapes import make_shape

pc, _ = normalize_unit_cube(make_shape("torus", 5000, seed=0))
l_r = ref_edge_length(pc)  # mean nearest-neighbour distance, the unit for noise and grid sizes
print(f"{len(pc)} points, l_r = {l_r:.5f}")

# noise kinds keep every point and move it; OC, RS and GS change the point count
for kind in KINDS:
    row = []
    for level in LEVELS:
        deg = distort(pc, kind, level, l_r, seed=level)
        if len(deg) == len(pc):
            moved = np.linalg.norm(deg.points - pc.points, axis=1).mean() / l_r
            row.append(f"{moved:5.2f} l_r")
        else:
            row.append(f"{len(deg):5d} pts")
    print(kind, " ".join(row), " params:", [level_parameter(kind, lv) for lv in LEVELS])
