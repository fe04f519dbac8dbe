"""Command line front end: ``prlgqa <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Options may also come from ``--config FILE`` holding ``key=value`` lines;
explicit command-line flags win over the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__, datasets, metrics, stats, training
from .distortions import KINDS, ImpulseMode
from .geometry import CloudFormatError, load_cloud
from .nn import ModelParams
from .shapes import shape_collection
from .training import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("prlgqa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path):
    """Parse ``key=value`` lines; ``#`` starts a comment. Keys use CLI spelling without dashes."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _run_hash(args):
    items = sorted((k, str(v)) for k, v in vars(args).items() if k not in ("func", "config"))
    return hashlib.sha256(json.dumps(items).encode()).hexdigest()[:12]


def _write_meta(path, args, **extra):
    lines = [f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in ("func",)]
    lines += [f"{k}={v}" for k, v in extra.items()]
    lines.append(f"run_hash={_run_hash(args)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _blocks(text):
    try:
        return tuple(int(b) for b in str(text).split(",") if b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad block list {text!r}") from None


def _add_train_options(p):
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lr-period", type=int, default=d.lr_period)
    p.add_argument("--patches", type=int, default=d.n_patches, help="patches per cloud while training")
    p.add_argument("--test-patches", type=int, default=d.n_patches_test)
    p.add_argument("--points", type=int, default=d.n_points, help="points per patch")
    p.add_argument("--radius", type=float, default=None, help="patch radius (default from l_r)")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--freeze-patches", action="store_true", help="sample patches once instead of per epoch")
    p.add_argument("--no-patch", action="store_true", help="ablation: whole cloud as one patch")
    p.add_argument("--equal-weights", action="store_true", help="ablation: constant patch weights")
    p.add_argument("--blocks", type=_blocks, default=d.block_subset, help="feature blocks, e.g. 3,4")
    p.add_argument("--no-scale-patches", action="store_true")


def _train_config(args):
    return TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, lr=args.lr, lr_period=args.lr_period,
        n_patches=args.patches, n_patches_test=args.test_patches, n_points=args.points,
        radius=args.radius, seed=args.seed, resample_patches=not args.freeze_patches,
        no_patch=args.no_patch, equal_weights=args.equal_weights, block_subset=args.blocks,
        scale_patches=not args.no_scale_patches,
    )


def _load_model(path):
    try:
        return ModelParams.load(path)
    except ValueError as exc:
        raise CloudFormatError(path, 0, str(exc)) from exc


# --- commands -----------------------------------------------------------------

def cmd_gen(args):
    out = Path(args.out)
    if args.synthetic:
        sources = {f"syn{i:03d}": pc for i, pc in enumerate(shape_collection(args.synthetic, args.synthetic_points, args.seed))}
    else:
        files = sorted(p for p in Path(args.sources).iterdir() if p.suffix.lower() in (".ply", ".xyz", ".txt"))
        if not files:
            raise UsageError(f"no .ply/.xyz files in {args.sources}")
        sources = {p.stem: load_cloud(p) for p in files}
    kinds = tuple(args.kinds.split(",")) if args.kinds else KINDS
    manifest, pairs = datasets.build_prld(sources, out, seed=args.seed, kinds=kinds,
                                          impulse_mode=ImpulseMode(args.impulse_mode),
                                          randomize_order=not args.ordered_pairs, workers=args.workers)
    report = []
    if args.pmos:
        manifest, report = datasets.build_pcgd_pmos(manifest, k=args.k)
        manifest.write(out / "manifest.tsv")
        if report:
            (out / "pmos_report.tsv").write_text("".join(f"{k}\t{m}\n" for k, m in report), encoding="utf-8")
    _write_meta(out / "gen.meta", args, sources=len(sources), rows=len(manifest), pairs=len(pairs))
    print(f"{len(sources)} sources, {len(manifest.distorted())} distorted clouds, {len(pairs)} pairs -> {out}")
    if report:
        print(f"{len(report)} rows could not be scored; see pmos_report.tsv", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_pairs(args):
    manifest = datasets.Manifest.read(args.manifest)
    pairs_path = args.pairs or Path(args.manifest).with_name("pairs.tsv")
    pairs = datasets.read_pairs(pairs_path)
    train, test, train_ids, test_ids = datasets.split_pairs(manifest, pairs, args.train_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets.write_pairs(out / "train_pairs.tsv", train)
    datasets.write_pairs(out / "test_pairs.tsv", test)
    _write_meta(out / "split.meta", args, train_sources=",".join(train_ids), test_sources=",".join(test_ids))
    print(f"train {len(train)} pairs ({len(train_ids)} sources), test {len(test)} pairs ({len(test_ids)} sources)")
    return EXIT_OK


def _clouds_for(manifest, keys):
    return {k: manifest.load(k) for k in sorted(set(keys))}


def cmd_train(args):
    manifest = datasets.Manifest.read(args.manifest)
    pairs = datasets.read_pairs(args.pairs)
    clouds = _clouds_for(manifest, [k for p in pairs for k in (p.cloud_a, p.cloud_b)])
    config = _train_config(args)
    params, train_log = training.train_rank(pairs, clouds, config, run_dir=args.out)
    run_dir = Path(args.out) / config.config_hash()
    params.save(run_dir / "model.gqan")
    _write_meta(run_dir / "run.meta", args, config_hash=config.config_hash())
    print(train_log.to_text(), end="")
    print(f"weights -> {run_dir / 'model.gqan'}")
    return EXIT_OK


def cmd_finetune(args):
    manifest = datasets.Manifest.read(args.manifest)
    wanted = set(args.sources.split(",")) if args.sources else None
    rows = [r for r in manifest.distorted() if wanted is None or r.source_id in wanted]
    scores = {r.key: r.pseudo_mos for r in rows}
    clouds = _clouds_for(manifest, [r.key for r in rows if r.pseudo_mos is not None])
    config = _train_config(args)
    params, ft_log = training.finetune_scores(scores, clouds, _load_model(args.model), config, run_dir=args.out)
    run_dir = Path(args.out) / config.config_hash()
    params.save(run_dir / "model.gqan")
    _write_meta(run_dir / "run.meta", args, config_hash=config.config_hash(), rejected=len(ft_log.rejected))
    for key, msg in ft_log.rejected:
        print(f"rejected {key}: {msg}", file=sys.stderr)
    print(ft_log.to_text(), end="")
    print(f"weights -> {run_dir / 'model.gqan'}")
    return EXIT_OK


def cmd_rank(args):
    params = _load_model(args.model)
    config = _train_config(args)
    p_ab, s_a, s_b = training.rank_pair(params, load_cloud(args.cloud_a), load_cloud(args.cloud_b), config)
    print(f"{'A' if p_ab > 0.5 else 'B'}\t{p_ab:.6f}")
    return EXIT_OK


def cmd_score(args):
    params = _load_model(args.model)
    config = _train_config(args)
    print(f"{training.predict(params, load_cloud(args.cloud), config):.6f}")
    return EXIT_OK


def cmd_frmetric(args):
    ref, deg = load_cloud(args.reference), load_cloud(args.degraded)
    if args.metric == "all":
        results = metrics.compute_all(ref, deg, k=args.k)
    else:
        results = {args.metric: metrics.compute_metric(args.metric, ref, deg, k=args.k)}
    for name, r in results.items():
        print(f"{name}\t{r.value:.10g}\t{r.orientation}")
    return EXIT_OK


def _pair_kind(manifest, pair):
    for key in (pair.cloud_a, pair.cloud_b):
        row = manifest[key]
        if not row.is_pristine:
            return row.kind
    return datasets.PRISTINE


def _evaluate_accuracy(args, manifest):
    pairs = datasets.read_pairs(args.pairs)
    kinds = [k for k in KINDS if any(_pair_kind(manifest, p) == k for p in pairs)]
    keys = [k for p in pairs for k in (p.cloud_a, p.cloud_b)]
    refs = {k: manifest.pristine_of(manifest[k].source_id).key for k in keys}
    clouds = _clouds_for(manifest, keys + list(refs.values()))
    rows = {}
    for name in args.metric_list:
        cache = {}
        decisions = {k: [] for k in kinds}
        for p in pairs:
            q = []
            for key in (p.cloud_a, p.cloud_b):
                if key not in cache:
                    cache[key] = metrics.compute_metric(name, clouds[refs[key]], clouds[key], k=args.k).quality()
                q.append(cache[key])
            decisions[_pair_kind(manifest, p)].append((q[0] > q[1], p.target > 0.5))
        rows[name] = {k: 100 * stats.ranking_accuracy(d) for k, d in decisions.items() if d}
    if args.model:
        params = _load_model(args.model)
        config = _train_config(args)
        decided = training.pair_decisions(params, pairs, clouds, config)
        by_kind = {k: [] for k in kinds}
        for p, d in zip([p for p in pairs if p.target != 0.5], decided):
            by_kind[_pair_kind(manifest, p)].append(d)
        rows["gqanet"] = {k: 100 * stats.ranking_accuracy(d) for k, d in by_kind.items() if d}
    return stats.format_report(rows, kinds, title="pairwise ranking accuracy (%)")


def _evaluate_ltest(args, manifest):
    kinds = [k for k in KINDS if any(r.kind == k for r in manifest.rows)]
    rows = {}
    methods = list(args.metric_list) + (["gqanet"] if args.model else [])
    params = _load_model(args.model) if args.model else None
    config = _train_config(args)
    for name in methods:
        per_kind = {}
        for kind in kinds:
            cells = {}
            for sid in manifest.source_ids:
                ref = manifest.load(manifest.pristine_of(sid).key)
                lv, q = [], []
                for row in manifest.rows:
                    if row.source_id == sid and row.kind == kind:
                        deg = manifest.load(row.key)
                        lv.append(row.level)
                        if name == "gqanet":
                            q.append(training.predict(params, deg, config))
                        else:
                            q.append(metrics.compute_metric(name, ref, deg, k=args.k).quality())
                cells[(sid, kind)] = (lv, q)
            # quality() is higher-better for every method
            per_kind[kind] = stats.l_test(cells, higher_is_better=True)
        rows[name] = per_kind
    return stats.format_report(rows, kinds, title="list-wise ranking consistency (SRCC per kind, mean = L_Test)")


def _evaluate_correlation(args, manifest):
    scored = [r for r in manifest.distorted() if r.pseudo_mos is not None]
    if len(scored) < 2:
        raise datasets.DatasetError("manifest has fewer than 2 pseudo-MOS rows")
    y = [r.pseudo_mos for r in scored]
    methods = list(args.metric_list) + (["gqanet"] if args.model else [])
    params = _load_model(args.model) if args.model else None
    config = _train_config(args)
    rows = {}
    for name in methods:
        pred = []
        for r in scored:
            deg = manifest.load(r.key)
            if name == "gqanet":
                pred.append(training.predict(params, deg, config))
            else:
                pred.append(metrics.compute_metric(name, manifest.load(manifest.pristine_of(r.source_id).key), deg,
                                                   k=args.k).quality())
        rows[name] = {"PLCC": abs(stats.plcc(y, pred)), "SRCC": abs(stats.srcc(y, pred)), "KRCC": abs(stats.krcc(y, pred))}
    lines = ["# correlation with pseudo-MOS", "method\tPLCC\tSRCC\tKRCC"]
    for name, v in rows.items():
        lines.append(f"{name}\t{v['PLCC']:.3f}\t{v['SRCC']:.3f}\t{v['KRCC']:.3f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    manifest = datasets.Manifest.read(args.manifest)
    args.metric_list = [] if args.metrics in ("", "none") else (
        list(metrics.METRIC_NAMES) if args.metrics == "all" else args.metrics.split(","))
    for name in args.metric_list:
        if name not in metrics.METRIC_NAMES:
            raise UsageError(f"unknown metric {name!r}")
    if args.mode == "accuracy":
        if not args.pairs:
            raise UsageError("--pairs is required for accuracy mode")
        report = _evaluate_accuracy(args, manifest)
    elif args.mode == "ltest":
        report = _evaluate_ltest(args, manifest)
    else:
        report = _evaluate_correlation(args, manifest)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="prlgqa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value defaults file")
        p.set_defaults(func=func)
        return p

    p = command("gen", cmd_gen, "build the distorted dataset, manifest and ranked pairs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sources", help="directory of reference .ply/.xyz clouds")
    src.add_argument("--synthetic", type=int, help="use N built-in synthetic shapes")
    p.add_argument("--synthetic-points", type=int, default=5000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kinds", default="", help="comma list, default all seven")
    p.add_argument("--impulse-mode", default=ImpulseMode.ZERO_BELOW.value, choices=[m.value for m in ImpulseMode])
    p.add_argument("--ordered-pairs", action="store_true", help="always put the less distorted cloud first")
    p.add_argument("--pmos", action="store_true", help="also score every distorted cloud with pseudo-MOS")
    p.add_argument("--k", type=int, default=16, help="neighbours for normal estimation")
    p.add_argument("--workers", type=int, default=1)

    p = command("pairs", cmd_pairs, "split pairs into train/test by reference cloud")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "siamese rank training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="run directory root")
    _add_train_options(p)

    p = command("finetune", cmd_finetune, "fine-tune on pseudo-MOS scores")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--sources", default="", help="comma list of source ids to train on (default all)")
    p.add_argument("--out", required=True)
    _add_train_options(p)

    p = command("rank", cmd_rank, "which of two clouds has better geometry")
    p.add_argument("--model", required=True)
    p.add_argument("cloud_a")
    p.add_argument("cloud_b")
    _add_train_options(p)

    p = command("score", cmd_score, "absolute quality score of one cloud")
    p.add_argument("--model", required=True)
    p.add_argument("cloud")
    _add_train_options(p)

    p = command("frmetric", cmd_frmetric, "full-reference metric between two clouds")
    p.add_argument("--metric", default="all", choices=list(metrics.METRIC_NAMES) + ["all"])
    p.add_argument("--k", type=int, default=16)
    p.add_argument("reference")
    p.add_argument("degraded")

    p = command("eval", cmd_eval, "evaluation tables for FR metrics and/or a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pairs")
    p.add_argument("--mode", choices=("accuracy", "ltest", "correlation"), default="accuracy")
    p.add_argument("--metrics", default="all", help="comma list of metric names, 'all' or 'none'")
    p.add_argument("--model")
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--out")
    _add_train_options(p)
    return parser


def _parse(parser, argv):
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("-v", "--verbose", action="store_true")
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub = parser._subparsers._group_actions[0].choices.get(known.command) if known.command else None
    if known.config and sub is not None:
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in read_config_file(known.config).items():
            if key not in actions:
                raise UsageError(f"unknown config key {key!r}")
            action = actions[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                defaults[key] = action.type(value)
            else:
                defaults[key] = value
            # a value from the file satisfies a required option
            action.required = False
        for group in sub._mutually_exclusive_groups:
            if any(a.dest in defaults for a in group._group_actions):
                group.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        try:
            args = _parse(parser, argv)
        except SystemExit as exc:  # argparse usage errors, --help, --version
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"prlgqa: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (training.TrainingError, FloatingPointError) as exc:
        print(f"prlgqa: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CloudFormatError, datasets.DatasetError, OSError, KeyError, ValueError) as exc:
        print(f"prlgqa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
