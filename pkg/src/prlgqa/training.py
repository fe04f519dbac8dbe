"""Siamese pairwise rank training, score fine-tuning and inference for GQANet."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gqanet
from .datasets import derive_seed
from .geometry import SpatialIndex, ref_edge_length
from .nn import Adam, ModelParams, NonFiniteGradientError, deterministic, sigmoid, step_lr

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    """A non-finite loss or gradient stopped training."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 20
    lr: float = 1e-5
    lr_period: int = 2
    lr_factor: float = 0.5
    n_patches: int = 64
    n_patches_test: int = 112
    n_points: int = 512
    radius: float | None = None
    seed: int = 0
    resample_patches: bool = True
    no_patch: bool = False
    equal_weights: bool = False
    block_subset: tuple = (1, 2, 3, 4)
    scale_patches: bool = True
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        subset = tuple(sorted(set(self.block_subset)))
        if not subset or not set(subset) <= {1, 2, 3, 4}:
            raise ValueError("block_subset must be a non-empty subset of {1, 2, 3, 4}")
        object.__setattr__(self, "block_subset", subset)

    def config_hash(self):
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in dataclasses.fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    pair_accuracy: float | None = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    def to_text(self):
        lines = ["#epoch\tmean_loss\tpair_accuracy\tlr"]
        for r in self.records:
            acc = "-" if r.pair_accuracy is None else f"{r.pair_accuracy:.6f}"
            lines.append(f"{r.epoch}\t{r.mean_loss:.10g}\t{acc}\t{r.lr:.6g}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


# --- pairwise probability and loss ----------------------------------------

def rank_probability(s_a, s_b):
    """P(A better than B) = sigmoid(S_A - S_B)."""
    return sigmoid(np.asarray(s_a, dtype=np.float64) - np.asarray(s_b, dtype=np.float64))


def rank_loss(p, target):
    """Binary cross-entropy of predicted probability ``p`` against ``target``."""
    p = np.asarray(p, dtype=np.float64)
    return -target * np.log(p) - (1.0 - target) * np.log1p(-p)


def rank_loss_from_diff(diff, target):
    """Cross-entropy written in the score difference; never overflows."""
    return target * np.logaddexp(0.0, -diff) + (1.0 - target) * np.logaddexp(0.0, diff)


def rank_loss_grad(diff, target):
    """d(loss)/d(S_A - S_B) = P_AB - target."""
    return sigmoid(diff) - target


# --- patch preparation ------------------------------------------------------

class _CloudCache:
    """Per-cloud spatial index and reference edge length, built on first use."""

    def __init__(self, clouds):
        self.clouds = clouds
        self._index = {}
        self._l_r = {}
        self._digest = {}

    def cloud(self, key):
        return self.clouds[key]

    def index(self, key):
        if key not in self._index:
            self._index[key] = SpatialIndex(self.clouds[key])
        return self._index[key]

    def l_r(self, key):
        if key not in self._l_r:
            self._l_r[key] = ref_edge_length(self.clouds[key])
        return self._l_r[key]

    def digest(self, key):
        if key not in self._digest:
            self._digest[key] = hashlib.sha1(self.clouds[key].points.tobytes()).digest()
        return self._digest[key]


def _center_member(cache, key_a, key_b):
    # order-independent choice of the cloud that supplies the FPS centres
    na, nb = len(cache.cloud(key_a)), len(cache.cloud(key_b))
    if na != nb:
        return key_a if na < nb else key_b
    return key_a if cache.digest(key_a) <= cache.digest(key_b) else key_b


def _pair_patch_sets(cache, key_a, key_b, config, n_patches, seed):
    if config.no_patch:
        return (gqanet.whole_cloud_patch(cache.cloud(key_a), config.n_points, seed=seed),
                gqanet.whole_cloud_patch(cache.cloud(key_b), config.n_points, seed=seed))
    ck = _center_member(cache, key_a, key_b)
    center_pc = cache.cloud(ck)
    radius = config.radius or gqanet.default_radius(cache.l_r(ck), config.n_points)
    n = min(n_patches, len(center_pc))
    centers = center_pc.points[gqanet.farthest_point_sample(center_pc, n, seed=seed)]
    pa = gqanet.make_patches(cache.cloud(key_a), centers, radius, config.n_points, seed=seed, index=cache.index(key_a))
    pb = gqanet.make_patches(cache.cloud(key_b), centers, radius, config.n_points, seed=seed, index=cache.index(key_b))
    return pa, pb


def _single_patch_set(cache, key, config, n_patches, seed):
    pc = cache.cloud(key)
    if config.no_patch:
        return gqanet.whole_cloud_patch(pc, config.n_points, seed=seed)
    radius = config.radius or gqanet.default_radius(cache.l_r(key), config.n_points)
    n = min(n_patches, len(pc))
    centers = pc.points[gqanet.farthest_point_sample(pc, n, seed=seed)]
    return gqanet.make_patches(pc, centers, radius, config.n_points, seed=seed, index=cache.index(key))


def _net_input(patches, config):
    return patches.scaled() if config.scale_patches else patches.rel


def _mode(config):
    return deterministic() if config.deterministic else contextlib.nullcontext()


def _write_checkpoint(run_dir, params, epoch, lr, config):
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"epoch_{epoch:03d}.gqan"
    params.save(path)
    meta = [f"epoch={epoch}", f"lr={lr!r}", f"seed={config.seed}", f"config_hash={config.config_hash()}"]
    meta += [f"{f.name}={getattr(config, f.name)!r}" for f in dataclasses.fields(config)]
    path.with_suffix(".meta").write_text("\n".join(meta) + "\n", encoding="utf-8")
    return path


# --- training ----------------------------------------------------------------

def _pair_seed(config, epoch, pair_idx):
    return derive_seed(config.seed, epoch if config.resample_patches else 0, pair_idx, 11)


def train_rank(pairs, clouds, config=TrainConfig(), params=None, run_dir=None, on_epoch=None):
    """Fit one shared GQANet on ranked pairs with the cross-entropy rank loss.

    ``clouds`` maps every key referenced by ``pairs`` to a PointCloud. Both
    members of a pair run through the same ``params`` object. If
    ``run_dir`` is given, a checkpoint is written after every epoch into
    ``run_dir / config_hash``. Returns ``(params, TrainLog)``.
    """
    if not pairs:
        raise ValueError("no training pairs")
    params = ModelParams.init(config.seed, config.block_subset) if params is None else params
    cache = _CloudCache(clouds)
    opt = Adam(params, lr=config.lr)
    train_log = TrainLog()
    out_dir = None if run_dir is None else Path(run_dir) / config.config_hash()
    step = 0
    with _mode(config):
        for epoch in range(config.epochs):
            opt.lr = step_lr(epoch, config.lr, config.lr_period, config.lr_factor)
            order = np.random.default_rng(derive_seed(config.seed, epoch, 7)).permutation(len(pairs))
            losses, correct, decided = [], 0, 0
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                grads = params.zeros_like()
                batch_loss = 0.0
                for pi in batch:
                    pair = pairs[pi]
                    pa, pb = _pair_patch_sets(cache, pair.cloud_a, pair.cloud_b, config,
                                              config.n_patches, _pair_seed(config, epoch, int(pi)))
                    s_a, cache_a = gqanet.forward(params, _net_input(pa, config), config.equal_weights)
                    s_b, cache_b = gqanet.forward(params, _net_input(pb, config), config.equal_weights)
                    diff = s_a - s_b
                    loss = float(rank_loss_from_diff(diff, pair.target)) if math.isfinite(diff) else math.nan
                    if not math.isfinite(loss):
                        raise TrainingError(f"non-finite loss for pair ({pair.cloud_a}, {pair.cloud_b}) "
                                            f"at epoch {epoch}, step {step}")
                    batch_loss += loss
                    g = float(rank_loss_grad(diff, pair.target)) / len(batch)
                    gqanet.backward(params, cache_a, g, grads)
                    gqanet.backward(params, cache_b, -g, grads)
                    if pair.target != 0.5:
                        decided += 1
                        correct += (diff > 0) == (pair.target > 0.5)
                try:
                    opt.step(params, grads)
                except NonFiniteGradientError as exc:
                    raise TrainingError(f"{exc} at epoch {epoch}, step {step}") from exc
                losses.append(batch_loss / len(batch))
                step += 1
            rec = EpochRecord(epoch, float(np.mean(losses)), opt.lr, correct / decided if decided else None)
            train_log.records.append(rec)
            log.info("epoch %d loss %.6f acc %s lr %.3g", epoch, rec.mean_loss, rec.pair_accuracy, rec.lr)
            if out_dir is not None:
                _write_checkpoint(out_dir, params, epoch, opt.lr, config)
            if on_epoch is not None:
                on_epoch(rec, params)
    if out_dir is not None:
        train_log.write(out_dir / "train_log.tsv")
    return params, train_log


def finetune_scores(scores, clouds, pretrained, config=TrainConfig(), run_dir=None):
    """Regress S(X) onto scores in [0, 1] with mean squared error.

    ``scores`` maps cloud keys to target scores. Rows outside [0, 1] or
    non-finite are skipped and listed in ``log.rejected``. ``pretrained``
    is copied, not modified.
    """
    params = pretrained.copy()
    train_log = TrainLog()
    items = []
    for key, y in scores.items():
        if y is None or not math.isfinite(y) or not 0.0 <= y <= 1.0:
            train_log.rejected.append((key, f"score {y!r} outside [0, 1]"))
            continue
        items.append((key, float(y)))
    if not items:
        raise ValueError("no valid scored samples")
    cache = _CloudCache(clouds)
    opt = Adam(params, lr=config.lr)
    out_dir = None if run_dir is None else Path(run_dir) / config.config_hash()
    with _mode(config):
        for epoch in range(config.epochs):
            opt.lr = step_lr(epoch, config.lr, config.lr_period, config.lr_factor)
            order = np.random.default_rng(derive_seed(config.seed, epoch, 8)).permutation(len(items))
            losses = []
            for start in range(0, len(order), config.batch_size):
                batch = order[start:start + config.batch_size]
                grads = params.zeros_like()
                sq = 0.0
                for i in batch:
                    key, y = items[i]
                    ps = _single_patch_set(cache, key, config, config.n_patches, _pair_seed(config, epoch, int(i)))
                    s, fc = gqanet.forward(params, _net_input(ps, config), config.equal_weights)
                    sq += (y - s) ** 2
                    gqanet.backward(params, fc, 2.0 * (s - y) / len(batch), grads)
                mse = sq / len(batch)
                if not math.isfinite(mse):
                    raise TrainingError(f"non-finite fine-tuning loss at epoch {epoch}")
                opt.step(params, grads)
                losses.append(mse)
            train_log.records.append(EpochRecord(epoch, float(np.mean(losses)), opt.lr))
            if out_dir is not None:
                _write_checkpoint(out_dir, params, epoch, opt.lr, config)
    if out_dir is not None:
        train_log.write(out_dir / "finetune_log.tsv")
    return params, train_log


def mse_loss(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    return float(np.mean((y - y_hat) ** 2))


# --- inference ---------------------------------------------------------------

def predict(params, pc, config=TrainConfig(), n_patches=None, seed=None):
    """Absolute quality index S in (0, 1) of one cloud, self-sampled FPS centres."""
    cache = _CloudCache({"x": pc})
    n = config.n_patches_test if n_patches is None else n_patches
    ps = _single_patch_set(cache, "x", config, n, config.seed if seed is None else seed)
    with _mode(config):
        return gqanet.forward(params, _net_input(ps, config), config.equal_weights)[0]


def rank_pair(params, pc_a, pc_b, config=TrainConfig(), n_patches=None, seed=None):
    """Return ``(P_AB, S_A, S_B)`` using shared FPS centres for both clouds."""
    cache = _CloudCache({"a": pc_a, "b": pc_b})
    n = config.n_patches_test if n_patches is None else n_patches
    pa, pb = _pair_patch_sets(cache, "a", "b", config, n, config.seed if seed is None else seed)
    with _mode(config):
        s_a = gqanet.forward(params, _net_input(pa, config), config.equal_weights)[0]
        s_b = gqanet.forward(params, _net_input(pb, config), config.equal_weights)[0]
    return float(rank_probability(s_a, s_b)), s_a, s_b


def pair_decisions(params, pairs, clouds, config=TrainConfig(), n_patches=None):
    """``(predicted A better, truly A better)`` per pair, skipping 0.5 targets."""
    cache = _CloudCache(clouds)
    n = config.n_patches_test if n_patches is None else n_patches
    out = []
    with _mode(config):
        for i, pair in enumerate(pairs):
            if pair.target == 0.5:
                continue
            pa, pb = _pair_patch_sets(cache, pair.cloud_a, pair.cloud_b, config, n, derive_seed(config.seed, i, 13))
            s_a = gqanet.forward(params, _net_input(pa, config), config.equal_weights)[0]
            s_b = gqanet.forward(params, _net_input(pb, config), config.equal_weights)[0]
            out.append((bool(s_a > s_b), bool(pair.target > 0.5)))
    return out
