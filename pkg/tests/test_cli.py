import filecmp
import subprocess
import sys

import numpy as np
import pytest

from prlgqa.cli import main
from prlgqa.geometry import PointCloud, save_cloud
from prlgqa.nn import ModelParams

TRAIN_OPTS = ["--epochs", "8", "--patches", "8", "--test-patches", "8", "--points", "32",
              "--lr", "3e-4", "--lr-period", "100", "--batch-size", "4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--synthetic", "2", "--synthetic-points", "1500", "--kinds", "GN,RS",
                 "--out", str(root / "ds"), "--seed", "1", "--pmos", "--k", "8"]) == 0
    return root


@pytest.fixture(scope="module")
def model(dataset):
    ds = dataset / "ds"
    lines = (ds / "pairs.tsv").read_text().splitlines()
    (dataset / "gn_pairs.tsv").write_text("\n".join([lines[0]] + [l for l in lines[1:] if "/GN" in l]) + "\n")
    assert main(["train", "--manifest", str(ds / "manifest.tsv"), "--pairs", str(dataset / "gn_pairs.tsv"),
                 "--out", str(dataset / "runs"), *TRAIN_OPTS]) == 0
    (path,) = (dataset / "runs").glob("*/model.gqan")
    return path


def test_usage_errors(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "gen", "--out", "x")[0] == 1  # no source option
    assert run(capsys, "frmetric", "--bogus", "a", "b")[0] == 1


def test_frmetric_identical_files(capsys, tmp_path):
    pc = PointCloud(np.random.default_rng(0).uniform(size=(200, 3)))
    save_cloud(tmp_path / "a.ply", pc)
    save_cloud(tmp_path / "b.xyz", pc)
    code, out, _ = run(capsys, "frmetric", "--metric", "po2po_mse", tmp_path / "a.ply", tmp_path / "b.xyz")
    assert code == 0
    assert out == "po2po_mse\t0\tlower-better\n"
    code, out, _ = run(capsys, "frmetric", "--k", "8", tmp_path / "a.ply", tmp_path / "b.xyz")
    assert code == 0 and len(out.splitlines()) == 9
    assert "po2po_psnr\tinf\thigher-better" in out


def test_data_errors(capsys, tmp_path):
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2\n")
    assert run(capsys, "frmetric", bad, bad)[0] == 2
    assert run(capsys, "frmetric", tmp_path / "missing.ply", bad)[0] == 2
    weights = tmp_path / "w.gqan"
    weights.write_bytes(b"nope")
    assert run(capsys, "score", "--model", weights, bad)[0] == 2


def test_gen_outputs(dataset):
    ds = dataset / "ds"
    assert len(list((ds / "clouds").glob("*/*.ply"))) == 2 * (10 + 1)
    assert len((ds / "pairs.tsv").read_text().splitlines()) == 1 + 2 * 30
    meta = (ds / "gen.meta").read_text()
    assert "seed=1" in meta and "run_hash=" in meta
    rows = [line.split("\t") for line in (ds / "manifest.tsv").read_text().splitlines()[1:]]
    scored = [float(r[4]) for r in rows if r[1] != "pristine"]
    assert len(scored) == 20 and all(0 <= s <= 1 for s in scored)


def test_gen_is_reproducible(dataset, tmp_path):
    assert main(["gen", "--synthetic", "2", "--synthetic-points", "1500", "--kinds", "GN,RS",
                 "--out", str(tmp_path / "ds"), "--seed", "1", "--pmos", "--k", "8"]) == 0
    a, b = dataset / "ds", tmp_path / "ds"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "gen.meta")
    assert files
    for rel in files:
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_pairs_split(capsys, dataset, tmp_path):
    code, out, _ = run(capsys, "pairs", "--manifest", dataset / "ds" / "manifest.tsv", "--out", tmp_path,
                       "--train-fraction", "0.5", "--seed", "2")
    assert code == 0
    assert out.startswith("train 30 pairs (1 sources), test 30 pairs (1 sources)")
    meta = (tmp_path / "split.meta").read_text()
    assert "seed=2" in meta


def test_score_rank_and_eval(capsys, dataset, model):
    clouds = dataset / "ds" / "clouds" / "syn000"
    code, out, _ = run(capsys, "score", "--model", model, "--test-patches", "8", "--points", "32",
                       clouds / "GN3.ply")
    assert code == 0
    value = out.strip()
    assert len(value.split(".")[1]) == 6 and 0 < float(value) < 1
    code, out, _ = run(capsys, "rank", "--model", model, "--test-patches", "8", "--points", "32",
                       clouds / "pristine.ply", clouds / "GN5.ply")
    assert code == 0 and out.startswith("A\t")
    code, out, _ = run(capsys, "rank", "--model", model, "--test-patches", "8", "--points", "32",
                       clouds / "GN5.ply", clouds / "pristine.ply")
    assert code == 0 and out.startswith("B\t")

    ds = dataset / "ds"
    code, out, _ = run(capsys, "eval", "--manifest", ds / "manifest.tsv", "--pairs", ds / "pairs.tsv",
                       "--metrics", "po2po_mse", "--model", model, "--test-patches", "8", "--points", "32",
                       "--out", dataset / "acc.tsv")
    assert code == 0
    lines = out.splitlines()
    assert lines[1] == "method\tGN\tRS\tmean"
    assert lines[2].startswith("po2po_mse\t100.000\t")
    assert lines[3].startswith("gqanet\t")
    assert (dataset / "acc.tsv").read_text() == out


def test_eval_ltest_and_correlation(capsys, dataset):
    ds = dataset / "ds"
    code, out, _ = run(capsys, "eval", "--mode", "ltest", "--manifest", ds / "manifest.tsv",
                       "--metrics", "po2po_mse,po2po_psnr", "--k", "8")
    assert code == 0
    assert "po2po_mse\t1.000\t" in out and "po2po_psnr\t1.000\t" in out
    code, out, _ = run(capsys, "eval", "--mode", "correlation", "--manifest", ds / "manifest.tsv",
                       "--metrics", "pl2pl_mse", "--k", "8")
    assert code == 0 and out.splitlines()[1] == "method\tPLCC\tSRCC\tKRCC"
    assert run(capsys, "eval", "--manifest", ds / "manifest.tsv", "--metrics", "nope")[0] == 1
    assert run(capsys, "eval", "--manifest", ds / "manifest.tsv")[0] == 1  # accuracy needs --pairs


def test_finetune_and_numeric_failure(capsys, dataset, model, tmp_path):
    ds = dataset / "ds"
    code, out, _ = run(capsys, "finetune", "--manifest", ds / "manifest.tsv", "--model", model,
                       "--out", tmp_path / "ft", "--epochs", "1", "--patches", "2", "--points", "16")
    assert code == 0 and list((tmp_path / "ft").glob("*/model.gqan"))
    bad = ModelParams.load(model)
    bad.head_s[3].bias[0] = np.inf
    bad.head_w[3].bias[0] = -np.inf
    bad.save(tmp_path / "bad.gqan")
    code, _, err = run(capsys, "finetune", "--manifest", ds / "manifest.tsv", "--model", tmp_path / "bad.gqan",
                       "--out", tmp_path / "ft2", "--epochs", "1", "--patches", "2", "--points", "16")
    assert code == 3 and "numerical failure" in err


def test_config_file_and_override(capsys, dataset, tmp_path):
    cfg = tmp_path / "pairs.cfg"
    cfg.write_text(f"# split settings\nmanifest = {dataset / 'ds' / 'manifest.tsv'}\n"
                   f"out = {tmp_path / 'from_cfg'}\ntrain-fraction = 0.5\nseed = 9\n")
    code, _, _ = run(capsys, "pairs", "--config", cfg)
    assert code == 0 and "seed=9" in (tmp_path / "from_cfg" / "split.meta").read_text()
    code, _, _ = run(capsys, "pairs", "--config", cfg, "--seed", "4")
    assert "seed=4" in (tmp_path / "from_cfg" / "split.meta").read_text()
    gen_cfg = tmp_path / "gen.cfg"
    gen_cfg.write_text(f"synthetic = 1\nsynthetic_points = 300\nkinds = GN\nout = {tmp_path / 'g'}\n")
    assert run(capsys, "gen", "--config", gen_cfg)[0] == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(capsys, "pairs", "--config", bad)[0] == 1
    bad.write_text("just words\n")
    assert run(capsys, "pairs", "--config", bad)[0] == 1


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "prlgqa.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
