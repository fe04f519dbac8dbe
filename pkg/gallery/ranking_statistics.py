"""
PLCC, SRCC, KRCC and the list-wise consistency test
===================================================

"""

import numpy as np
from prlgqa.stats import krcc, l_test, plcc, ranking_accuracy, srcc

rng = np.random.default_rng(0)
mos = rng.uniform(size=40)
pred = mos + rng.normal(0, 0.1, size=40)
print("PLCC", plcc(mos, pred), "SRCC", srcc(mos, pred), "KRCC", krcc(mos, pred))

# rank statistics ignore monotone warping, Pearson does not
print("after exp():", plcc(mos, np.exp(5 * pred)), srcc(mos, np.exp(5 * pred)))

# ties: average ranks for SRCC, neither concordant nor discordant for KRCC
print(srcc([1, 2, 2, 3], [1, 2, 3, 4]), krcc([1, 2, 2, 3], [1, 2, 3, 4]))

# L_Test: one quality vector per (content, distortion) cell, scores should fall with level
cells = {("bunny", "GN"): ([1, 2, 3, 4, 5], [0.9, 0.8, 0.6, 0.5, 0.2]),
         ("bunny", "UN"): ([1, 2, 3, 4, 5], [0.9, 0.7, 0.8, 0.4, 0.3])}
print("L_Test", l_test(cells))

# pairwise accuracy from (predicted A better, truly A better)
print("accuracy", ranking_accuracy([(True, True), (False, False), (True, False), (True, True)]))
