"""Building the ranked-pair dataset and the pseudo-MOS scored dataset on disk.

Layout under an output directory::

    manifest.tsv        one row per cloud (pristine and distorted)
    pairs.tsv           ranked pairs, keys refer to manifest rows
    clouds/<source>/<kind><level>.ply
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .distortions import KINDS, LEVELS, ImpulseMode, distort
from .geometry import PointCloud, load_cloud, normalize_unit_cube, ref_edge_length, save_cloud
from .metrics import pseudo_mos

PRISTINE = "pristine"
MANIFEST_HEADER = "#source_id\tkind\tlevel\tpath\tpseudo_mos\tseed"
PAIRS_HEADER = "#cloud_a\tcloud_b\ttarget"


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    source_id: str
    kind: str
    level: int
    path: str
    pseudo_mos: float | None = None
    seed: int = 0

    @property
    def key(self):
        return row_key(self.source_id, self.kind, self.level)

    @property
    def is_pristine(self):
        return self.kind == PRISTINE


def row_key(source_id, kind, level):
    return f"{source_id}/{PRISTINE}" if kind == PRISTINE else f"{source_id}/{kind}{level}"


@dataclass(frozen=True)
class PairSample:
    cloud_a: str
    cloud_b: str
    target: float

    def swapped(self):
        return PairSample(self.cloud_b, self.cloud_a, 1.0 - self.target)


class Manifest:
    """Ordered collection of :class:`ManifestRow` with paths relative to ``root``."""

    def __init__(self, rows, root="."):
        self.rows = list(rows)
        self.root = Path(root)
        self._by_key = {}
        for row in self.rows:
            if row.key in self._by_key:
                raise DatasetError(f"duplicate manifest key {row.key}")
            self._by_key[row.key] = row
        paths = [r.path for r in self.rows]
        if len(set(paths)) != len(paths):
            raise DatasetError("manifest paths must be unique")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, key):
        return self._by_key[key]

    def __contains__(self, key):
        return key in self._by_key

    @property
    def source_ids(self):
        return sorted({r.source_id for r in self.rows})

    def distorted(self):
        return [r for r in self.rows if not r.is_pristine]

    def pristine_of(self, source_id):
        return self._by_key[row_key(source_id, PRISTINE, 0)]

    def path_of(self, key):
        return self.root / self._by_key[key].path

    def load(self, key):
        return load_cloud(self.path_of(key))

    def load_all(self, keys=None):
        keys = [r.key for r in self.rows] if keys is None else keys
        return {k: self.load(k) for k in keys}

    def write(self, path):
        lines = [MANIFEST_HEADER]
        for r in self.rows:
            mos = "-" if r.pseudo_mos is None else repr(float(r.pseudo_mos))
            lines.append(f"{r.source_id}\t{r.kind}\t{r.level}\t{r.path}\t{mos}\t{r.seed}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path):
        path = Path(path)
        rows = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise DatasetError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
            sid, kind, level, rel, mos, seed = fields
            rows.append(ManifestRow(sid, kind, int(level), rel, None if mos in ("-", "") else float(mos), int(seed)))
        return cls(rows, root=path.parent)


def write_pairs(path, pairs):
    lines = [PAIRS_HEADER] + [f"{p.cloud_a}\t{p.cloud_b}\t{p.target:g}" for p in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pairs(path):
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields")
        pairs.append(PairSample(fields[0], fields[1], float(fields[2])))
    return pairs


def derive_seed(*parts):
    """Stable 32-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def level_of(manifest, key):
    row = manifest[key]
    return 0 if row.is_pristine else row.level


def make_pairs(source_id, kinds=KINDS, randomize_order=False, seed=0):
    """All 15 unordered level pairs per kind over {pristine, L1..L5}.

    The less distorted member is ``cloud_a`` (target 1) unless
    ``randomize_order`` flips a seeded coin per pair, which swaps members
    and sets the target to 0.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for kind in kinds:
        keys = [row_key(source_id, PRISTINE, 0)] + [row_key(source_id, kind, lv) for lv in LEVELS]
        for a, b in itertools.combinations(keys, 2):
            pair = PairSample(a, b, 1.0)
            if randomize_order and rng.random() < 0.5:
                pair = pair.swapped()
            pairs.append(pair)
    return pairs


def _source_ids(sources):
    if isinstance(sources, dict):
        return list(sources.items())
    return [(f"src{i:03d}", pc) for i, pc in enumerate(sources)]


def _build_one(sidx, sid, pc, out_dir, seed, kinds, impulse_mode, normalize):
    try:
        if len(pc) < 2:
            raise ValueError("source needs at least 2 points")
        if normalize:
            pc, _ = normalize_unit_cube(pc.without_normals())
        l_r = ref_edge_length(pc)
        cloud_dir = out_dir / "clouds" / sid
        cloud_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        rel = f"clouds/{sid}/{PRISTINE}.ply"
        save_cloud(out_dir / rel, pc)
        rows.append(ManifestRow(sid, PRISTINE, 0, rel, None, seed))
        for kidx, kind in enumerate(KINDS):
            if kind not in kinds:
                continue
            for level in LEVELS:
                s = derive_seed(seed, sidx, kidx, level)
                deg = distort(pc, kind, level, l_r, s, impulse_mode=impulse_mode)
                rel = f"clouds/{sid}/{kind}{level}.ply"
                save_cloud(out_dir / rel, deg)
                rows.append(ManifestRow(sid, kind, level, rel, None, s))
        return rows
    except Exception as exc:
        raise DatasetError(f"source {sid}: {exc}") from exc


def build_prld(sources, out_dir, seed=0, kinds=KINDS, impulse_mode=ImpulseMode.ZERO_BELOW,
               normalize=True, randomize_order=True, workers=1):
    """Distort every source at all kinds and levels, write clouds, manifest and pairs.

    ``sources`` is a list of clouds (ids ``src000``...) or a dict id -> cloud.
    Returns ``(manifest, pairs)``; both are also written to ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = _source_ids(sources)
    kinds = tuple(k for k in KINDS if k in kinds)
    jobs = [(i, sid, pc, out_dir, seed, kinds, impulse_mode, normalize) for i, (sid, pc) in enumerate(items)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda job: _build_one(*job), jobs))
    else:
        results = [_build_one(*job) for job in jobs]
    rows = [row for chunk in results for row in chunk]
    manifest = Manifest(rows, root=out_dir)
    pairs = []
    for i, (sid, _) in enumerate(items):
        pairs += make_pairs(sid, kinds, randomize_order=randomize_order, seed=derive_seed(seed, i, 99))
    manifest.write(out_dir / "manifest.tsv")
    write_pairs(out_dir / "pairs.tsv", pairs)
    return manifest, pairs


def build_pcgd_pmos(manifest, k=16):
    """Score every distorted row by pseudo-MOS against its pristine source.

    Returns ``(scored_manifest, report)`` where ``report`` lists
    ``(row key, error message)`` for rows that could not be scored; those
    rows keep ``pseudo_mos=None``.
    """
    from .geometry import estimate_normals

    report = []
    ref_cache = {}
    new_rows = []
    for row in manifest.rows:
        if row.is_pristine:
            new_rows.append(row)
            continue
        try:
            if row.source_id not in ref_cache:
                ref = manifest.load(row_key(row.source_id, PRISTINE, 0))
                ref_cache[row.source_id] = ref if ref.has_normals else estimate_normals(ref, k=k)
            deg = manifest.load(row.key)
            score = pseudo_mos(ref_cache[row.source_id], deg, k=k)
            new_rows.append(replace(row, pseudo_mos=score))
        except Exception as exc:
            report.append((row.key, str(exc)))
            new_rows.append(row)
    return Manifest(new_rows, root=manifest.root), report


def split_sources(source_ids, train_fraction=0.8, seed=0):
    """Seeded split of source ids; the train share is round-half-up of fraction * count."""
    ids = sorted(source_ids)
    n_train = int(math.floor(len(ids) * train_fraction + 0.5))
    order = np.random.default_rng(seed).permutation(len(ids))
    train = sorted(ids[i] for i in order[:n_train])
    test = sorted(ids[i] for i in order[n_train:])
    return train, test


def split_pairs(manifest, pairs, train_fraction=0.8, seed=0):
    """Split pairs disjointly by reference cloud. Returns ``(train, test, train_ids, test_ids)``."""
    train_ids, test_ids = split_sources(manifest.source_ids, train_fraction, seed)
    train_set = set(train_ids)
    train, test = [], []
    for p in pairs:
        sid = manifest[p.cloud_a].source_id
        if manifest[p.cloud_b].source_id != sid:
            raise DatasetError(f"pair {p.cloud_a} / {p.cloud_b} mixes sources")
        (train if sid in train_set else test).append(p)
    return train, test, train_ids, test_ids
