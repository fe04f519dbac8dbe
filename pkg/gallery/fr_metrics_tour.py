"""
Full-reference metrics on Gaussian noise
========================================

Nine baselines: three correspondence families times three poolings.
"""

from prlgqa.distortions import LEVELS, distort
from prlgqa.geometry import estimate_normals, normalize_unit_cube, ref_edge_length
from prlgqa.metrics import METRIC_NAMES, compute_all, pseudo_mos
from prlgqa.shapes import make_shape

ref, _ = normalize_unit_cube(make_shape("blob", 6000, seed=3))
l_r = ref_edge_length(ref)
ref = estimate_normals(ref, k=16)  # reused by every po2pl / pl2pl call below

print("level\t" + "\t".join(METRIC_NAMES) + "\tpseudo_mos")
for level in LEVELS:
    deg = distort(ref, "GN", level, l_r, seed=level)
    res = compute_all(ref, deg)
    cells = [f"{res[name].value:.4g}" for name in METRIC_NAMES]
    print(f"GN{level}\t" + "\t".join(cells) + f"\t{pseudo_mos(ref, deg):.4f}")

# orientation tells which way is better
for name, r in compute_all(ref, distort(ref, "GN", 1, l_r, seed=1)).items():
    print(name, r.orientation)
