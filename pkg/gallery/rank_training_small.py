"""
Pairwise rank training on a toy dataset
=======================================

Two shapes, Gaussian noise only, a few epochs. Takes about a minute.
"""

import tempfile

from prlgqa import datasets, stats, training
from prlgqa.shapes import shape_collection

out = tempfile.mkdtemp()
manifest, pairs = datasets.build_prld(shape_collection(3, 2000, seed=0), out, kinds=("GN",))
train, test, train_ids, test_ids = datasets.split_pairs(manifest, pairs, 2 / 3, seed=0)
print(len(train), "training pairs from", train_ids, "|", len(test), "test pairs from", test_ids)

clouds = manifest.load_all()
config = training.TrainConfig(epochs=8, lr=3e-4, lr_period=100, n_patches=8, n_patches_test=16, n_points=64)
params, log = training.train_rank(train, clouds, config)
print(log.to_text())

acc = stats.ranking_accuracy(training.pair_decisions(params, test, clouds, config))
print(f"held-out pair accuracy {100 * acc:.1f}%")

